/* C interface to the mtl-forge multi-task regression toolkit.
 *
 * Every function returns an MtfStatus; outputs are written through pointer
 * arguments only on MTF_OK. On any failure a human-readable message is
 * stored per thread and can be fetched with mtf_last_error. No function
 * keeps references to caller memory after it returns.
 */

#ifndef MTL_FORGE_H
#define MTL_FORGE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum MtfStatus {
  MTF_OK = 0,
  /* Bad invocation: invalid sizes, mismatched shapes, wrong model family. */
  MTF_ERR_USAGE = 1,
  /* Bad input data: malformed file, unreadable path, empty sample. */
  MTF_ERR_DATA = 2,
  /* Numeric failure: NaN/Inf encountered or a statistic's precondition violated. */
  MTF_ERR_NUMERIC = 3,
  /* A required pointer argument was NULL. */
  MTF_ERR_NULL_ARG = 4,
  /* A string argument was not valid UTF-8. */
  MTF_ERR_UTF8 = 5,
  /* An internal panic was caught at the boundary; state may be stale. */
  MTF_ERR_PANIC = 6
} MtfStatus;

/* Opaque handle to a loaded model. Free with mtf_model_free. */
typedef struct MtfModel MtfModel;

/* Message describing this thread's most recent failure, or an empty string.
 * The pointer stays valid until the next failing call on the same thread. */
const char *mtf_last_error(void);

/* ---- metrics ---- */

/* Root-mean-square error between two length-len vectors. */
MtfStatus mtf_rmse(const double *pred, const double *actual, size_t len,
                   double *out);

/* Mean over tasks of 1 - model_rmse[i]/baseline_rmse[i]; positive means the
 * model improves on the baseline. */
MtfStatus mtf_skill_score(const double *model_rmse,
                          const double *baseline_rmse, size_t len,
                          double *out);

/* Pearson correlation coefficient of two length-len vectors. */
MtfStatus mtf_pearson(const double *x, const double *y, size_t len,
                      double *out);

/* ---- significance tests (two-sided) ---- */

/* Wilcoxon signed-rank test on paired samples; exact for up to 20 nonzero
 * differences, normal approximation beyond. */
MtfStatus mtf_wilcoxon(const double *a, const double *b, size_t len,
                       double *statistic, double *p_value);

/* Shapiro-Wilk normality test; 3 <= len <= 5000. */
MtfStatus mtf_shapiro_wilk(const double *sample, size_t len, double *w,
                           double *p_value);

/* Paired t-test with len-1 degrees of freedom. */
MtfStatus mtf_paired_t_test(const double *a, const double *b, size_t len,
                            double *t, double *p_value);

/* ---- model handles ---- */

/* Loads a model checkpoint; on MTF_OK the caller owns *out. */
MtfStatus mtf_model_load(const char *path, MtfModel **out);

/* Writes the model back out as a checkpoint file. */
MtfStatus mtf_model_save(const MtfModel *model, const char *path);

/* Number of trainable scalars in the model. */
MtfStatus mtf_model_parameter_count(const MtfModel *model, size_t *out);

/* Evaluation-mode predictions in standardized target space.
 *
 * features: row-major n_rows x n_features, standardized like the training
 * data. Per row: task_ids (0-based), hours (0-23), weeks (ISO week 1-53),
 * days (day of month 1-31). out receives n_rows predictions in row order.
 *
 * Architectures with per-task towers or heads require the same number of
 * rows for every task, grouped contiguously: all task-0 rows first, then
 * task 1, and so on. Single-network architectures accept any row order. */
MtfStatus mtf_model_predict(MtfModel *model, const double *features,
                            const size_t *task_ids, const uint32_t *hours,
                            const uint32_t *weeks, const uint32_t *days,
                            size_t n_rows, size_t n_features, double *out);

/* Frees a model handle; NULL is a no-op. */
void mtf_model_free(MtfModel *model);

#ifdef __cplusplus
}
#endif

#endif /* MTL_FORGE_H */
