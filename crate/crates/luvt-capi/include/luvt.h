/* C ABI for the luvt defect-detection pipeline.
 *
 * All functions returning int32_t use these status codes:
 *   0  LUVT_OK                success
 *   1  LUVT_ERR_USAGE         bad key, value, or flag combination
 *   2  LUVT_ERR_RUNTIME       I/O, data, or numeric failure
 *   3  LUVT_ERR_NULL_ARGUMENT required pointer was null
 *   4  LUVT_ERR_UTF8          string argument was not valid UTF-8
 *   5  LUVT_ERR_PANIC         internal invariant violation
 * On any nonzero status the thread-local message readable through
 * luvt_last_error_message() describes the failure.
 */

#ifndef LUVT_H
#define LUVT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

enum {
    LUVT_OK = 0,
    LUVT_ERR_USAGE = 1,
    LUVT_ERR_RUNTIME = 2,
    LUVT_ERR_NULL_ARGUMENT = 3,
    LUVT_ERR_UTF8 = 4,
    LUVT_ERR_PANIC = 5,
};

/* Opaque experiment configuration handle. */
typedef struct LuvtConfig LuvtConfig;

/* Headline evaluation metrics filled in by luvt_evaluate(). */
typedef struct LuvtEvalSummary {
    double auroc;
    double precision_at_r;
    double recall_at_r;
} LuvtEvalSummary;

/* Allocates a configuration with all defaults filled in. Never fails. */
LuvtConfig *luvt_config_new(void);

/* Frees a configuration. Null is a no-op. */
void luvt_config_free(LuvtConfig *cfg);

/* Applies one dotted "key = value" assignment (same keys as config files),
 * e.g. luvt_config_set(cfg, "ddpm.t_max", "200"). */
int32_t luvt_config_set(LuvtConfig *cfg, const char *key, const char *value);

/* Loads a line-based "key = value" config file into the handle. */
int32_t luvt_config_load_file(LuvtConfig *cfg, const char *path);

/* Synthesizes the configured train and test datasets on disk. */
int32_t luvt_synth(const LuvtConfig *cfg);

/* Trains the configured model family on the defect-free training data. */
int32_t luvt_train(const LuvtConfig *cfg);

/* Evaluates the trained model on the test split; on success fills *out with
 * the aggregate metrics and writes report artifacts under the output root. */
int32_t luvt_evaluate(const LuvtConfig *cfg, LuvtEvalSummary *out);

/* Tie-aware AUROC over n samples; labels are 1 = defective, 0 = defect-free.
 * Fails with LUVT_ERR_RUNTIME if only one class is present. */
int32_t luvt_roc_auc(const double *scores, const uint8_t *labels, size_t n,
                     double *out_auroc);

/* Copies the calling thread's last error message (NUL-terminated, possibly
 * truncated) into buf and returns the full message length in bytes. buf may
 * be null when len is 0. */
size_t luvt_last_error_message(char *buf, size_t len);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* LUVT_H */
