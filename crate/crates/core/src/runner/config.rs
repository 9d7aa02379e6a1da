//! Experiment configuration: a TOML file describing one run end to end.
//!
//! Every field is checked up front so a bad config dies with a field-level
//! message before the first request goes out.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynathink::RouteConfig;
use crate::gateway::{default_temperature, BackendKind, ModelConfig, DEFAULT_MAX_TOKENS};
use crate::method::MethodId;
use crate::perturb::{PerturbLevel, PerturbSpec, VariantSource};
use crate::task::TaskFamily;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse config{}: {message}", path_suffix(.path))]
    Parse {
        path: Option<PathBuf>,
        message: String,
    },
    #[error("invalid config field `{field}`: {message}")]
    Field { field: String, message: String },
}

fn path_suffix(path: &Option<PathBuf>) -> String {
    match path {
        Some(p) => format!(" {}", p.display()),
        None => String::new(),
    }
}

fn field_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    pub family: TaskFamily,
}

/// Optional subsampling; without it the whole dataset runs in file order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSection {
    pub n: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSection {
    pub name: MethodId,
    /// Directory of `*.txt` prompt steps; required for `ext:` methods.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynathinkSection {
    #[serde(default = "default_n0")]
    pub n0: usize,
    #[serde(default = "default_n_max")]
    pub n_max: usize,
}

fn default_n0() -> usize {
    RouteConfig::default().n0
}

fn default_n_max() -> usize {
    RouteConfig::default().n_max
}

impl DynathinkSection {
    pub fn route_config(&self) -> RouteConfig {
        RouteConfig {
            n0: self.n0,
            n_max: self.n_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSection {
    pub level: PerturbLevel,
    /// Defaults to the level's usual edit count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edits_per_step: Option<usize>,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<VariantSource>,
    /// Word-level substitutions, word -> candidate replacements.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<BTreeMap<String, Vec<String>>>,
}

impl PerturbationSection {
    pub fn to_spec(&self) -> PerturbSpec {
        let mut spec = PerturbSpec::new(self.level, self.seed);
        if let Some(edits) = self.edits_per_step {
            spec.edits_per_step = edits;
        }
        if let Some(source) = self.source {
            spec.variant_source = source;
        }
        spec.lexicon = self.lexicon.clone();
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub backend: BackendKind,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub request_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    /// Scripted responses for the mock backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<PathBuf>,
    /// Response cache toggle; defaults off for mock, on for HTTP.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

impl ModelSection {
    pub fn to_model_config(&self) -> ModelConfig {
        ModelConfig {
            backend: self.backend,
            model_name: self.name.clone(),
            temperature: self
                .temperature
                .unwrap_or_else(|| default_temperature(&self.name)),
            max_tokens: self.max_tokens.unwrap_or(DEFAULT_MAX_TOKENS),
            request_seed: self.request_seed,
            endpoint: self.endpoint.clone(),
        }
    }

    pub fn cache_enabled(&self) -> bool {
        self.cache
            .unwrap_or(self.backend == BackendKind::HttpChat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub concurrency: usize,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    /// Id of an embedded reference table, e.g. "gpt-3.5-turbo".
    pub table: String,
    /// Dataset column to compare under, e.g. "gsm8k". Defaults to the
    /// dataset file stem.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleSection>,
    pub method: MethodSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynathink: Option<DynathinkSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<PerturbationSection>,
    pub model: ModelSection,
    pub run: RunSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSection>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse {
                path: None,
                message: e.to_string(),
            })?;
        config.validate()?;
        Ok(config)
    }

    /// True when the configured method renders the three-step template set.
    pub fn uses_templates(&self) -> bool {
        matches!(
            self.method.name,
            MethodId::Fst(_) | MethodId::DynaThink
        )
    }

    pub fn route_config(&self) -> RouteConfig {
        self.dynathink
            .as_ref()
            .map(DynathinkSection::route_config)
            .unwrap_or_default()
    }

    /// Dataset name used when comparing against a reference table.
    pub fn dataset_label(&self) -> String {
        if let Some(reference) = &self.reference {
            if let Some(dataset) = &reference.dataset {
                return dataset.clone();
            }
        }
        self.dataset
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".to_string())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.dataset.path.as_os_str().is_empty() {
            return Err(field_err("dataset.path", "must not be empty"));
        }
        if let Some(sample) = &self.sample {
            if sample.n == 0 {
                return Err(field_err("sample.n", "must be at least 1"));
            }
        }
        match &self.method.name {
            MethodId::External(_) => {
                let dir = self.method.chain_dir.as_ref().ok_or_else(|| {
                    field_err("method.chain_dir", "required for ext: methods")
                })?;
                if dir.as_os_str().is_empty() {
                    return Err(field_err("method.chain_dir", "must not be empty"));
                }
            }
            _ => {
                if self.method.chain_dir.is_some() {
                    return Err(field_err(
                        "method.chain_dir",
                        "only applies to ext: methods",
                    ));
                }
            }
        }
        if let Some(dynathink) = &self.dynathink {
            if self.method.name != MethodId::DynaThink {
                return Err(field_err(
                    "dynathink",
                    "section only applies when method.name = \"dynathink\"",
                ));
            }
            if dynathink.n0 < 2 {
                return Err(field_err("dynathink.n0", "must be at least 2"));
            }
            if dynathink.n_max < dynathink.n0 {
                return Err(field_err(
                    "dynathink.n_max",
                    "must be at least dynathink.n0",
                ));
            }
        }
        if let Some(perturbation) = &self.perturbation {
            self.validate_perturbation(perturbation)?;
        }
        if self.model.name.trim().is_empty() {
            return Err(field_err("model.name", "must not be empty"));
        }
        if let Some(t) = self.model.temperature {
            if !(0.0..=2.0).contains(&t) {
                return Err(field_err(
                    "model.temperature",
                    format!("{t} is outside 0.0..=2.0"),
                ));
            }
        }
        if self.model.max_tokens == Some(0) {
            return Err(field_err("model.max_tokens", "must be at least 1"));
        }
        if self.model.backend == BackendKind::HttpChat && self.model.script.is_some() {
            return Err(field_err(
                "model.script",
                "only applies to the mock backend",
            ));
        }
        if self.run.concurrency == 0 {
            return Err(field_err("run.concurrency", "must be at least 1"));
        }
        if self.run.output_dir.as_os_str().is_empty() {
            return Err(field_err("run.output_dir", "must not be empty"));
        }
        if let Some(reference) = &self.reference {
            if super::reference::reference_table(&reference.table).is_none() {
                let known: Vec<&str> = super::reference::reference_tables()
                    .iter()
                    .map(|t| t.id.as_str())
                    .collect();
                return Err(field_err(
                    "reference.table",
                    format!(
                        "unknown table \"{}\"; known tables: {}",
                        reference.table,
                        known.join(", ")
                    ),
                ));
            }
        }
        Ok(())
    }

    fn validate_perturbation(
        &self,
        perturbation: &PerturbationSection,
    ) -> Result<(), ConfigError> {
        if !self.uses_templates() {
            return Err(field_err(
                "perturbation",
                format!(
                    "method \"{}\" does not render templates, so there is nothing to perturb",
                    self.method.name
                ),
            ));
        }
        if perturbation.edits_per_step == Some(0) {
            return Err(field_err(
                "perturbation.edits_per_step",
                "must be at least 1",
            ));
        }
        let source = perturbation.source.unwrap_or_default();
        match source {
            VariantSource::TableVariant => {
                if self.dataset.family != TaskFamily::LongContentQa {
                    return Err(field_err(
                        "perturbation.source",
                        "shipped variant templates exist only for the long-content-qa family",
                    ));
                }
            }
            VariantSource::Programmatic => match perturbation.level {
                PerturbLevel::Semantic => {
                    return Err(field_err(
                        "perturbation.level",
                        "semantic perturbation has no programmatic generator; use source = \"table-variant\"",
                    ));
                }
                PerturbLevel::Word => {
                    let has_lexicon = perturbation
                        .lexicon
                        .as_ref()
                        .is_some_and(|l| !l.is_empty());
                    if !has_lexicon {
                        return Err(field_err(
                            "perturbation.lexicon",
                            "word-level programmatic perturbation needs a non-empty lexicon",
                        ));
                    }
                }
                PerturbLevel::Character => {}
            },
        }
        Ok(())
    }

    /// Make relative paths absolute with respect to `base` (normally the
    /// config file's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.dataset.path);
        if let Some(dir) = &mut self.method.chain_dir {
            resolve(base, dir);
        }
        if let Some(script) = &mut self.model.script {
            resolve(base, script);
        }
        if let Some(cache_dir) = &mut self.model.cache_dir {
            resolve(base, cache_dir);
        }
        resolve(base, &mut self.run.output_dir);
    }
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut config: ExperimentConfig =
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: Some(path.to_path_buf()),
            message: e.to_string(),
        })?;
    if let Some(base) = path.parent() {
        config.resolve_paths(base);
    }
    config.validate()?;
    Ok(config)
}
