#ifndef HOIANOM_H
#define HOIANOM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of a fallible call.
 */
typedef enum HoianomStatus {
  HoianomStatus_Ok = 0,
  /**
   * A required pointer argument was null.
   */
  HoianomStatus_NullArgument = 1,
  /**
   * An argument value was rejected before any work started.
   */
  HoianomStatus_InvalidArgument = 2,
  /**
   * The filesystem failed.
   */
  HoianomStatus_IoError = 3,
  /**
   * Input data or model contents failed validation.
   */
  HoianomStatus_DataError = 4,
} HoianomStatus;

/**
 * Opaque explanation of one detection.
 */
typedef struct HoianomExplanation HoianomExplanation;

/**
 * Opaque fitted normality model.
 */
typedef struct HoianomModel HoianomModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *hoianom_version(void);

/**
 * Message of the last error raised on this thread. The pointer stays valid
 * until the next failing call on the same thread; do not free it.
 */
const char *hoianom_last_error_message(void);

/**
 * Loads a model file written by `hoianom fit` or [`hoianom_model_save`].
 *
 * # Safety
 * `path` must point to a NUL-terminated string and `out` to writable
 * storage for one pointer.
 */
enum HoianomStatus hoianom_model_load(const char *path, struct HoianomModel **out);

/**
 * Fits a model from a JSONL training stream and two vocabulary files.
 * `m_override` of 0 selects the component count by the BIC elbow over
 * `[m_min, m_max]`.
 *
 * # Safety
 * All path pointers must be NUL-terminated strings; `out` must point to
 * writable storage for one pointer.
 */
enum HoianomStatus hoianom_model_fit_jsonl(const char *train_path,
                                           const char *interactions_path,
                                           const char *objects_path,
                                           double variance_threshold,
                                           uintptr_t m_min,
                                           uintptr_t m_max,
                                           uintptr_t m_override,
                                           uint64_t seed,
                                           struct HoianomModel **out);

/**
 * # Safety
 * `model` must be a live handle from this library; `path` a NUL-terminated
 * string.
 */
enum HoianomStatus hoianom_model_save(const struct HoianomModel *model, const char *path);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be a pointer returned by a load or fit call, not yet freed.
 */
void hoianom_model_free(struct HoianomModel *model);

/**
 * Flat HOI vector length the model expects (`D`). Returns 0 on null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t hoianom_model_input_dim(const struct HoianomModel *model);

/**
 * Reduced (PCA) dimension. Returns 0 on null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t hoianom_model_reduced_dim(const struct HoianomModel *model);

/**
 * Mixture component count. Returns 0 on null.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
uintptr_t hoianom_model_component_count(const struct HoianomModel *model);

/**
 * Anomaly score (negative log mixture density) of one flattened HOI vector
 * laid out as `[interactions | objects | box w, h]`.
 *
 * # Safety
 * `model` must be a live handle, `values` must point to `len` readable
 * doubles, and `out_score` to one writable double.
 */
enum HoianomStatus hoianom_score_vector(const struct HoianomModel *model,
                                        const double *values,
                                        uintptr_t len,
                                        double *out_score);

/**
 * Smooths one video's frame scores in place with the truncated, window
 * renormalized Gaussian kernel.
 *
 * # Safety
 * `scores` must point to `len` readable and writable doubles.
 */
enum HoianomStatus hoianom_smooth_scores(double *scores, uintptr_t len, double sigma);

/**
 * Builds the saliency explanation of one flattened HOI vector.
 *
 * # Safety
 * `model` must be a live handle, `values` must point to `len` readable
 * doubles, and `out` to writable storage for one pointer.
 */
enum HoianomStatus hoianom_explain_vector(const struct HoianomModel *model,
                                          const double *values,
                                          uintptr_t len,
                                          struct HoianomExplanation **out);

/**
 * Total heatmap mass: the squared Mahalanobis deviation from the closest
 * normal event. Returns NaN on null.
 *
 * # Safety
 * `explanation` must be null or a live handle.
 */
double hoianom_explanation_total(const struct HoianomExplanation *explanation);

/**
 * 0-based index of the closest normal mixture component.
 *
 * # Safety
 * `explanation` must be null or a live handle.
 */
uintptr_t hoianom_explanation_mode(const struct HoianomExplanation *explanation);

/**
 * Side length of the square heatmap (`D`).
 *
 * # Safety
 * `explanation` must be null or a live handle.
 */
uintptr_t hoianom_explanation_dim(const struct HoianomExplanation *explanation);

/**
 * Sum of the two box-size diagonal entries.
 *
 * # Safety
 * `explanation` must be null or a live handle.
 */
double hoianom_explanation_location_score(const struct HoianomExplanation *explanation);

/**
 * Copies the coarse 3x3 block heatmap, row-major, into `out9`.
 *
 * # Safety
 * `explanation` must be a live handle and `out9` must point to 9 writable
 * doubles.
 */
enum HoianomStatus hoianom_explanation_coarse(const struct HoianomExplanation *explanation,
                                              double *out9);

/**
 * Copies the full `D x D` heatmap, row-major, into `out`, which holds
 * `out_len` doubles (`out_len` must be at least `D * D`).
 *
 * # Safety
 * `explanation` must be a live handle and `out` must point to `out_len`
 * writable doubles.
 */
enum HoianomStatus hoianom_explanation_heatmap(const struct HoianomExplanation *explanation,
                                               double *out,
                                               uintptr_t out_len);

/**
 * Releases an explanation handle. Null is ignored.
 *
 * # Safety
 * `explanation` must be a pointer returned by [`hoianom_explain_vector`],
 * not yet freed.
 */
void hoianom_explanation_free(struct HoianomExplanation *explanation);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HOIANOM_H */
