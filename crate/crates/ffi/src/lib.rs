//! C ABI for the fast-slow pipeline library.
//!
//! Conventions:
//! * Every function returns an [`FslStatus`]; `FSL_STATUS_OK` (0) means the
//!   out-parameters were written.  On any other status the out-parameters
//!   are untouched and [`fsl_last_error_message`] describes what went wrong.
//! * Strings returned through `char **` out-parameters are owned by the
//!   caller and must be released with [`fsl_string_free`].
//! * Task handles created by [`fsl_task_new`] must be released with
//!   [`fsl_task_free`].
//! * Panics never cross the boundary: they are caught and reported as
//!   `FSL_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use fastslow::coverage::{story_coverage, word_present, MatcherConfig};
use fastslow::extract::{extract_for_family, ExtractedAnswer};
use fastslow::metrics::{quadratic_weighted_kappa, token_f1_score, RatingPair};
use fastslow::runner::{load_experiment_config, run_experiment};
use fastslow::task::{Choice, GoldLabel, TaskFamily, TaskInstance};

use libc::c_char;

/// Result code returned by every library call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FslStatus {
    /// The call succeeded and all out-parameters were written.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// An argument was structurally valid but semantically rejected.
    InvalidArgument = 3,
    /// The operation itself failed; see `fsl_last_error_message`.
    RuntimeError = 4,
    /// An internal panic was caught at the boundary.
    Panic = 5,
}

/// Discriminates what [`fsl_extract_answer`] found in a model response.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FslAnswerKind {
    /// A number; the value is in the numeric out-parameter.
    Numeric = 0,
    /// A multiple-choice label; the text out-parameter holds the label.
    Choice = 1,
    /// A rubric score; the value is in the numeric out-parameter.
    Score = 2,
    /// A full story; the text out-parameter holds it.
    Story = 3,
    /// Free text; the text out-parameter holds it.
    Text = 4,
    /// Nothing extractable was found.
    Unparsed = 5,
}

/// Opaque task handle. Create with [`fsl_task_new`], release with
/// [`fsl_task_free`].
pub struct FslTask {
    inner: TaskInstance,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    let stored = CString::new(message)
        .unwrap_or_else(|_| CString::new("unrepresentable error message").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(stored));
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Run `body` with panics converted to `FslStatus::Panic`.
fn guard(body: impl FnOnce() -> FslStatus) -> FslStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let detail = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "no panic message".to_string());
            set_error(format!("internal panic: {detail}"));
            FslStatus::Panic
        }
    }
}

/// Borrow a C string argument, reporting null and bad UTF-8.
unsafe fn read_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, FslStatus> {
    if ptr.is_null() {
        set_error(format!("{name} must not be null"));
        return Err(FslStatus::NullPointer);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error(format!("{name} is not valid UTF-8"));
        FslStatus::InvalidUtf8
    })
}

/// Hand a Rust string to the caller; release with [`fsl_string_free`].
fn export_string(value: String) -> *mut c_char {
    CString::new(value.replace('\0', " "))
        .unwrap_or_else(|_| CString::new("unrepresentable string").unwrap())
        .into_raw()
}

/// Library version as a static string. Do **not** free the result.
#[no_mangle]
pub extern "C" fn fsl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message describing the most recent failure on this thread, or null when
/// the last call succeeded. The caller owns the returned string.
#[no_mangle]
pub extern "C" fn fsl_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|slot| match slot.borrow().as_ref() {
        Some(message) => message.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Release a string previously returned by this library.
///
/// # Safety
/// `s` must be null or a pointer obtained from a `char **` out-parameter of
/// this library (or [`fsl_last_error_message`]), and must not be used after
/// this call.
#[no_mangle]
pub unsafe extern "C" fn fsl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Quadratic weighted kappa between two raters on an ordinal scale with
/// `n_levels` levels (scores are 0-based). Writes the statistic to `out`.
///
/// # Safety
/// `model_scores` and `gold_scores` must point to `len` readable `int64_t`
/// values each; `out` must be a valid pointer to a writable double.
#[no_mangle]
pub unsafe extern "C" fn fsl_qwk(
    model_scores: *const i64,
    gold_scores: *const i64,
    len: usize,
    n_levels: usize,
    out: *mut f64,
) -> FslStatus {
    guard(|| {
        clear_error();
        if model_scores.is_null() || gold_scores.is_null() || out.is_null() {
            set_error("fsl_qwk requires non-null score arrays and out pointer");
            return FslStatus::NullPointer;
        }
        let model = unsafe { std::slice::from_raw_parts(model_scores, len) };
        let gold = unsafe { std::slice::from_raw_parts(gold_scores, len) };
        let pairs: Vec<RatingPair> = model
            .iter()
            .zip(gold)
            .map(|(&m, &g)| RatingPair {
                model_score: m,
                gold_score: g,
            })
            .collect();
        match quadratic_weighted_kappa(&pairs, n_levels) {
            Ok(value) => {
                unsafe { *out = value };
                FslStatus::Ok
            }
            Err(error) => {
                set_error(error.to_string());
                FslStatus::InvalidArgument
            }
        }
    })
}

/// Whitespace-token F1 overlap between a prediction and a reference,
/// after shared normalization. Writes a value in [0, 1] to `out`.
///
/// # Safety
/// `prediction` and `reference` must be valid NUL-terminated strings and
/// `out` must be a valid pointer to a writable double.
#[no_mangle]
pub unsafe extern "C" fn fsl_token_f1(
    prediction: *const c_char,
    reference: *const c_char,
    out: *mut f64,
) -> FslStatus {
    guard(|| {
        clear_error();
        let prediction = match unsafe { read_str(prediction, "prediction") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let reference = match unsafe { read_str(reference, "reference") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out.is_null() {
            set_error("fsl_token_f1 requires a non-null out pointer");
            return FslStatus::NullPointer;
        }
        unsafe { *out = token_f1_score(prediction, reference) };
        FslStatus::Ok
    })
}

/// True when `word` occurs in `text` under the lenient matcher (case-
/// insensitive, tolerating common inflectional endings).
///
/// # Safety
/// `text` and `word` must be valid NUL-terminated strings and `out` must be
/// a valid pointer to a writable bool.
#[no_mangle]
pub unsafe extern "C" fn fsl_word_present(
    text: *const c_char,
    word: *const c_char,
    out: *mut bool,
) -> FslStatus {
    guard(|| {
        clear_error();
        let text = match unsafe { read_str(text, "text") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let word = match unsafe { read_str(word, "word") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out.is_null() {
            set_error("fsl_word_present requires a non-null out pointer");
            return FslStatus::NullPointer;
        }
        unsafe { *out = word_present(text, word, &MatcherConfig::default()) };
        FslStatus::Ok
    })
}

/// Score one story against its required word list. Writes whether every
/// word was present and how many were missing.
///
/// # Safety
/// `story` must be a valid NUL-terminated string; `required_words` must
/// point to `n_required` valid NUL-terminated strings; `complete_out` and
/// `missing_out` must be valid writable pointers.
#[no_mangle]
pub unsafe extern "C" fn fsl_story_coverage(
    story: *const c_char,
    required_words: *const *const c_char,
    n_required: usize,
    complete_out: *mut bool,
    missing_out: *mut usize,
) -> FslStatus {
    guard(|| {
        clear_error();
        let story = match unsafe { read_str(story, "story") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        if required_words.is_null() || complete_out.is_null() || missing_out.is_null() {
            set_error("fsl_story_coverage requires non-null word list and out pointers");
            return FslStatus::NullPointer;
        }
        let raw = unsafe { std::slice::from_raw_parts(required_words, n_required) };
        let mut words = Vec::with_capacity(n_required);
        for (index, &ptr) in raw.iter().enumerate() {
            match unsafe { read_str(ptr, &format!("required_words[{index}]")) } {
                Ok(word) => words.push(word.to_string()),
                Err(status) => return status,
            }
        }
        match story_coverage(story, &words, &MatcherConfig::default()) {
            Ok(result) => {
                unsafe {
                    *complete_out = result.complete;
                    *missing_out = result.missing.len();
                }
                FslStatus::Ok
            }
            Err(error) => {
                set_error(error.to_string());
                FslStatus::InvalidArgument
            }
        }
    })
}

/// Create a task handle for answer extraction. `family` is one of the
/// dataset family names (`math-reasoning`, `multiple-choice`,
/// `long-content-qa`, `essay-scoring`, `constrained-story`).
///
/// # Safety
/// `family`, `id` and `statement` must be valid NUL-terminated strings and
/// `out` must be a valid pointer to a writable task-handle pointer.
#[no_mangle]
pub unsafe extern "C" fn fsl_task_new(
    family: *const c_char,
    id: *const c_char,
    statement: *const c_char,
    out: *mut *mut FslTask,
) -> FslStatus {
    guard(|| {
        clear_error();
        let family_name = match unsafe { read_str(family, "family") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let id = match unsafe { read_str(id, "id") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let statement = match unsafe { read_str(statement, "statement") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        if out.is_null() {
            set_error("fsl_task_new requires a non-null out pointer");
            return FslStatus::NullPointer;
        }
        let family: TaskFamily = match family_name.parse() {
            Ok(f) => f,
            Err(error) => {
                set_error(error.to_string());
                return FslStatus::InvalidArgument;
            }
        };
        let task = TaskInstance {
            id: id.to_string(),
            family,
            statement: statement.to_string(),
            context: None,
            choices: Vec::new(),
            required_words: Vec::new(),
            gold: GoldLabel::default(),
            category: None,
            score_range: None,
        };
        unsafe { *out = Box::into_raw(Box::new(FslTask { inner: task })) };
        FslStatus::Ok
    })
}

/// Append one answer option to a multiple-choice task.
///
/// # Safety
/// `task` must be a live handle from [`fsl_task_new`]; `label` and `text`
/// must be valid NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn fsl_task_add_choice(
    task: *mut FslTask,
    label: *const c_char,
    text: *const c_char,
) -> FslStatus {
    guard(|| {
        clear_error();
        if task.is_null() {
            set_error("fsl_task_add_choice requires a non-null task");
            return FslStatus::NullPointer;
        }
        let label = match unsafe { read_str(label, "label") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let text = match unsafe { read_str(text, "text") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let task = unsafe { &mut *task };
        task.inner.choices.push(Choice {
            label: label.to_string(),
            text: text.to_string(),
        });
        FslStatus::Ok
    })
}

/// Set the inclusive rubric range for an essay-scoring task.
///
/// # Safety
/// `task` must be a live handle from [`fsl_task_new`].
#[no_mangle]
pub unsafe extern "C" fn fsl_task_set_score_range(
    task: *mut FslTask,
    low: i64,
    high: i64,
) -> FslStatus {
    guard(|| {
        clear_error();
        if task.is_null() {
            set_error("fsl_task_set_score_range requires a non-null task");
            return FslStatus::NullPointer;
        }
        if low >= high {
            set_error(format!("score range {low}..{high} is empty"));
            return FslStatus::InvalidArgument;
        }
        unsafe { &mut *task }.inner.score_range = Some((low, high));
        FslStatus::Ok
    })
}

/// Attach supporting context (a passage or an essay) to a task.
///
/// # Safety
/// `task` must be a live handle from [`fsl_task_new`]; `context` must be a
/// valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fsl_task_set_context(
    task: *mut FslTask,
    context: *const c_char,
) -> FslStatus {
    guard(|| {
        clear_error();
        if task.is_null() {
            set_error("fsl_task_set_context requires a non-null task");
            return FslStatus::NullPointer;
        }
        let context = match unsafe { read_str(context, "context") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        unsafe { &mut *task }.inner.context = Some(context.to_string());
        FslStatus::Ok
    })
}

/// Append one required word to a constrained-story task.
///
/// # Safety
/// `task` must be a live handle from [`fsl_task_new`]; `word` must be a
/// valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fsl_task_require_word(
    task: *mut FslTask,
    word: *const c_char,
) -> FslStatus {
    guard(|| {
        clear_error();
        if task.is_null() {
            set_error("fsl_task_require_word requires a non-null task");
            return FslStatus::NullPointer;
        }
        let word = match unsafe { read_str(word, "word") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        unsafe { &mut *task }.inner.required_words.push(word.to_string());
        FslStatus::Ok
    })
}

/// Release a task handle.
///
/// # Safety
/// `task` must be null or a handle from [`fsl_task_new`] that has not been
/// freed yet; it must not be used after this call.
#[no_mangle]
pub unsafe extern "C" fn fsl_task_free(task: *mut FslTask) {
    if !task.is_null() {
        drop(unsafe { Box::from_raw(task) });
    }
}

/// Extract the final answer a model response commits to, using the task's
/// family-specific rules. `kind_out` receives what was found; for
/// `Numeric`/`Score` the value is written to `numeric_out`; for
/// `Choice`/`Story`/`Text` the payload is written to `text_out` (caller
/// frees). On `Unparsed`, `numeric_out` is 0 and `text_out` is null.
///
/// # Safety
/// `task` must be a live handle from [`fsl_task_new`]; `response` must be a
/// valid NUL-terminated string; `kind_out`, `numeric_out` and `text_out`
/// must be valid writable pointers.
#[no_mangle]
pub unsafe extern "C" fn fsl_extract_answer(
    task: *const FslTask,
    response: *const c_char,
    kind_out: *mut FslAnswerKind,
    numeric_out: *mut f64,
    text_out: *mut *mut c_char,
) -> FslStatus {
    guard(|| {
        clear_error();
        if task.is_null() || kind_out.is_null() || numeric_out.is_null() || text_out.is_null() {
            set_error("fsl_extract_answer requires non-null task and out pointers");
            return FslStatus::NullPointer;
        }
        let response = match unsafe { read_str(response, "response") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let task = unsafe { &*task };
        let (kind, numeric, text) = match extract_for_family(&task.inner, response) {
            ExtractedAnswer::Numeric(value) => (FslAnswerKind::Numeric, value, None),
            ExtractedAnswer::Choice(label) => (FslAnswerKind::Choice, 0.0, Some(label)),
            ExtractedAnswer::Score(score) => (FslAnswerKind::Score, score as f64, None),
            ExtractedAnswer::Story(story) => (FslAnswerKind::Story, 0.0, Some(story)),
            ExtractedAnswer::Text(text) => (FslAnswerKind::Text, 0.0, Some(text)),
            ExtractedAnswer::Unparsed => (FslAnswerKind::Unparsed, 0.0, None),
        };
        unsafe {
            *kind_out = kind;
            *numeric_out = numeric;
            *text_out = match text {
                Some(payload) => export_string(payload),
                None => std::ptr::null_mut(),
            };
        }
        FslStatus::Ok
    })
}

/// Run a full experiment from a TOML config file (the same format the CLI
/// accepts). On success the manifest and TSV report paths are written to
/// the out-parameters (caller frees; either may be null to skip).
///
/// # Safety
/// `config_path` must be a valid NUL-terminated string;
/// `manifest_path_out` and `report_path_out` must each be null or a valid
/// pointer to a writable `char *`.
#[no_mangle]
pub unsafe extern "C" fn fsl_run_experiment(
    config_path: *const c_char,
    manifest_path_out: *mut *mut c_char,
    report_path_out: *mut *mut c_char,
) -> FslStatus {
    guard(|| {
        clear_error();
        let path = match unsafe { read_str(config_path, "config_path") } {
            Ok(s) => s,
            Err(status) => return status,
        };
        let config = match load_experiment_config(Path::new(path)) {
            Ok(config) => config,
            Err(error) => {
                set_error(error.to_string());
                return FslStatus::RuntimeError;
            }
        };
        let artifacts = match run_experiment(&config) {
            Ok(artifacts) => artifacts,
            Err(error) => {
                set_error(error.to_string());
                return FslStatus::RuntimeError;
            }
        };
        unsafe {
            if !manifest_path_out.is_null() {
                *manifest_path_out = export_string(artifacts.manifest_path.display().to_string());
            }
            if !report_path_out.is_null() {
                *report_path_out = export_string(artifacts.report_tsv.display().to_string());
            }
        }
        FslStatus::Ok
    })
}
