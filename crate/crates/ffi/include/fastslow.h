/* C interface to the fast-slow pipeline library. */

#ifndef FASTSLOW_H
#define FASTSLOW_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Discriminates what [`fsl_extract_answer`] found in a model response.
 */
typedef enum FslAnswerKind {
  /**
   * A number; the value is in the numeric out-parameter.
   */
  FSL_ANSWER_KIND_NUMERIC = 0,
  /**
   * A multiple-choice label; the text out-parameter holds the label.
   */
  FSL_ANSWER_KIND_CHOICE = 1,
  /**
   * A rubric score; the value is in the numeric out-parameter.
   */
  FSL_ANSWER_KIND_SCORE = 2,
  /**
   * A full story; the text out-parameter holds it.
   */
  FSL_ANSWER_KIND_STORY = 3,
  /**
   * Free text; the text out-parameter holds it.
   */
  FSL_ANSWER_KIND_TEXT = 4,
  /**
   * Nothing extractable was found.
   */
  FSL_ANSWER_KIND_UNPARSED = 5,
} FslAnswerKind;

/**
 * Result code returned by every library call.
 */
typedef enum FslStatus {
  /**
   * The call succeeded and all out-parameters were written.
   */
  FSL_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  FSL_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  FSL_STATUS_INVALID_UTF8 = 2,
  /**
   * An argument was structurally valid but semantically rejected.
   */
  FSL_STATUS_INVALID_ARGUMENT = 3,
  /**
   * The operation itself failed; see `fsl_last_error_message`.
   */
  FSL_STATUS_RUNTIME_ERROR = 4,
  /**
   * An internal panic was caught at the boundary.
   */
  FSL_STATUS_PANIC = 5,
} FslStatus;

/**
 * Opaque task handle. Create with [`fsl_task_new`], release with
 * [`fsl_task_free`].
 */
typedef struct FslTask FslTask;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static string. Do **not** free the result.
 */
const char *fsl_version(void);

/**
 * Message describing the most recent failure on this thread, or null when
 * the last call succeeded. The caller owns the returned string.
 */
char *fsl_last_error_message(void);

/**
 * Release a string previously returned by this library.
 *
 * # Safety
 * `s` must be null or a pointer obtained from a `char **` out-parameter of
 * this library (or [`fsl_last_error_message`]), and must not be used after
 * this call.
 */
void fsl_string_free(char *s);

/**
 * Quadratic weighted kappa between two raters on an ordinal scale with
 * `n_levels` levels (scores are 0-based). Writes the statistic to `out`.
 *
 * # Safety
 * `model_scores` and `gold_scores` must point to `len` readable `int64_t`
 * values each; `out` must be a valid pointer to a writable double.
 */
enum FslStatus fsl_qwk(const int64_t *model_scores,
                       const int64_t *gold_scores,
                       uintptr_t len,
                       uintptr_t n_levels,
                       double *out);

/**
 * Whitespace-token F1 overlap between a prediction and a reference,
 * after shared normalization. Writes a value in [0, 1] to `out`.
 *
 * # Safety
 * `prediction` and `reference` must be valid NUL-terminated strings and
 * `out` must be a valid pointer to a writable double.
 */
enum FslStatus fsl_token_f1(const char *prediction, const char *reference, double *out);

/**
 * True when `word` occurs in `text` under the lenient matcher (case-
 * insensitive, tolerating common inflectional endings).
 *
 * # Safety
 * `text` and `word` must be valid NUL-terminated strings and `out` must be
 * a valid pointer to a writable bool.
 */
enum FslStatus fsl_word_present(const char *text, const char *word, bool *out);

/**
 * Score one story against its required word list. Writes whether every
 * word was present and how many were missing.
 *
 * # Safety
 * `story` must be a valid NUL-terminated string; `required_words` must
 * point to `n_required` valid NUL-terminated strings; `complete_out` and
 * `missing_out` must be valid writable pointers.
 */
enum FslStatus fsl_story_coverage(const char *story,
                                  const char *const *required_words,
                                  uintptr_t n_required,
                                  bool *complete_out,
                                  uintptr_t *missing_out);

/**
 * Create a task handle for answer extraction. `family` is one of the
 * dataset family names (`math-reasoning`, `multiple-choice`,
 * `long-content-qa`, `essay-scoring`, `constrained-story`).
 *
 * # Safety
 * `family`, `id` and `statement` must be valid NUL-terminated strings and
 * `out` must be a valid pointer to a writable task-handle pointer.
 */
enum FslStatus fsl_task_new(const char *family,
                            const char *id,
                            const char *statement,
                            struct FslTask **out);

/**
 * Append one answer option to a multiple-choice task.
 *
 * # Safety
 * `task` must be a live handle from [`fsl_task_new`]; `label` and `text`
 * must be valid NUL-terminated strings.
 */
enum FslStatus fsl_task_add_choice(struct FslTask *task, const char *label, const char *text);

/**
 * Set the inclusive rubric range for an essay-scoring task.
 *
 * # Safety
 * `task` must be a live handle from [`fsl_task_new`].
 */
enum FslStatus fsl_task_set_score_range(struct FslTask *task, int64_t low, int64_t high);

/**
 * Attach supporting context (a passage or an essay) to a task.
 *
 * # Safety
 * `task` must be a live handle from [`fsl_task_new`]; `context` must be a
 * valid NUL-terminated string.
 */
enum FslStatus fsl_task_set_context(struct FslTask *task, const char *context);

/**
 * Append one required word to a constrained-story task.
 *
 * # Safety
 * `task` must be a live handle from [`fsl_task_new`]; `word` must be a
 * valid NUL-terminated string.
 */
enum FslStatus fsl_task_require_word(struct FslTask *task, const char *word);

/**
 * Release a task handle.
 *
 * # Safety
 * `task` must be null or a handle from [`fsl_task_new`] that has not been
 * freed yet; it must not be used after this call.
 */
void fsl_task_free(struct FslTask *task);

/**
 * Extract the final answer a model response commits to, using the task's
 * family-specific rules. `kind_out` receives what was found; for
 * `Numeric`/`Score` the value is written to `numeric_out`; for
 * `Choice`/`Story`/`Text` the payload is written to `text_out` (caller
 * frees). On `Unparsed`, `numeric_out` is 0 and `text_out` is null.
 *
 * # Safety
 * `task` must be a live handle from [`fsl_task_new`]; `response` must be a
 * valid NUL-terminated string; `kind_out`, `numeric_out` and `text_out`
 * must be valid writable pointers.
 */
enum FslStatus fsl_extract_answer(const struct FslTask *task,
                                  const char *response,
                                  enum FslAnswerKind *kind_out,
                                  double *numeric_out,
                                  char **text_out);

/**
 * Run a full experiment from a TOML config file (the same format the CLI
 * accepts). On success the manifest and TSV report paths are written to
 * the out-parameters (caller frees; either may be null to skip).
 *
 * # Safety
 * `config_path` must be a valid NUL-terminated string;
 * `manifest_path_out` and `report_path_out` must each be null or a valid
 * pointer to a writable `char *`.
 */
enum FslStatus fsl_run_experiment(const char *config_path,
                                  char **manifest_path_out,
                                  char **report_path_out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* FASTSLOW_H */
