//! Identifiers for the answer-producing methods the harness can run.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::fst::AblationMode;

/// A method that turns a task into a final answer. Identifiers are stable
/// strings: they name transcript files, report rows, and config entries.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MethodId {
    /// One raw call with the task text.
    Base,
    /// One call, nudged into showing its reasoning.
    ZeroShotCot,
    /// Abstraction call, then an answer call grounded in it.
    StepBack,
    /// Consistency-routed multi-sample answering.
    DynaThink,
    /// The fast-slow pipeline, possibly ablated.
    Fst(AblationMode),
    /// User-supplied prompt chain loaded from a directory.
    External(String),
}

impl MethodId {
    /// Fixed per-task call budget, when the method has one.
    pub fn call_budget(&self) -> Option<u64> {
        match self {
            MethodId::Base | MethodId::ZeroShotCot => Some(1),
            MethodId::StepBack => Some(2),
            MethodId::DynaThink => None,
            MethodId::Fst(mode) => Some(mode.call_budget()),
            MethodId::External(_) => None,
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodId::Base => write!(f, "base"),
            MethodId::ZeroShotCot => write!(f, "zero-shot-cot"),
            MethodId::StepBack => write!(f, "step-back"),
            MethodId::DynaThink => write!(f, "dynathink"),
            MethodId::Fst(AblationMode::Full) => write!(f, "fst"),
            MethodId::Fst(AblationMode::FtOnly) => write!(f, "fst-ft"),
            MethodId::Fst(AblationMode::StOnly) => write!(f, "fst-st"),
            MethodId::Fst(AblationMode::FtSt) => write!(f, "fst-ft-st"),
            MethodId::External(name) => write!(f, "ext:{name}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown method {0:?}")]
pub struct UnknownMethod(pub String);

impl FromStr for MethodId {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "base" => MethodId::Base,
            "zero-shot-cot" => MethodId::ZeroShotCot,
            "step-back" => MethodId::StepBack,
            "dynathink" => MethodId::DynaThink,
            "fst" => MethodId::Fst(AblationMode::Full),
            "fst-ft" => MethodId::Fst(AblationMode::FtOnly),
            "fst-st" => MethodId::Fst(AblationMode::StOnly),
            "fst-ft-st" => MethodId::Fst(AblationMode::FtSt),
            other => match other.strip_prefix("ext:") {
                Some(name) if !name.is_empty() => MethodId::External(name.to_string()),
                _ => return Err(UnknownMethod(s.to_string())),
            },
        })
    }
}

impl Serialize for MethodId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identifiers_round_trip() {
        let ids = [
            "base",
            "zero-shot-cot",
            "step-back",
            "dynathink",
            "fst",
            "fst-ft",
            "fst-st",
            "fst-ft-st",
            "ext:my-chain",
        ];
        for id in ids {
            let parsed: MethodId = id.parse().unwrap();
            assert_eq!(parsed.to_string(), id);
        }
        assert!("fst-oi".parse::<MethodId>().is_err());
        assert!("ext:".parse::<MethodId>().is_err());
    }

    #[test]
    fn budgets_match_the_step_shape() {
        assert_eq!(MethodId::Base.call_budget(), Some(1));
        assert_eq!(MethodId::ZeroShotCot.call_budget(), Some(1));
        assert_eq!(MethodId::StepBack.call_budget(), Some(2));
        assert_eq!(MethodId::Fst(AblationMode::Full).call_budget(), Some(3));
        assert_eq!(MethodId::Fst(AblationMode::FtOnly).call_budget(), Some(1));
        assert_eq!(MethodId::Fst(AblationMode::StOnly).call_budget(), Some(1));
        assert_eq!(MethodId::Fst(AblationMode::FtSt).call_budget(), Some(2));
        assert_eq!(MethodId::DynaThink.call_budget(), None);
    }

    #[test]
    fn serde_uses_the_display_string() {
        let json = serde_json::to_string(&MethodId::Fst(AblationMode::FtSt)).unwrap();
        assert_eq!(json, "\"fst-ft-st\"");
        let back: MethodId = serde_json::from_str(&json).unwrap();
        assert_eq!(back, MethodId::Fst(AblationMode::FtSt));
    }
}
