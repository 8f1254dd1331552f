#ifndef LITHOROUTE_H
#define LITHOROUTE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum LrStatus {
  LR_STATUS_OK = 0,
  LR_STATUS_NULL_POINTER = 1,
  LR_STATUS_INVALID_ARGUMENT = 2,
  LR_STATUS_DATA = 3,
  LR_STATUS_MODEL = 4,
  LR_STATUS_IO = 5,
  LR_STATUS_INTERNAL = 6,
} LrStatus;

/**
 * A persisted base classifier.
 */
typedef struct LrModel LrModel;

/**
 * Labelled reference points for exact nearest-neighbour search.
 */
typedef struct LrReferenceSet LrReferenceSet;

typedef struct LrWeightedMetrics {
  double precision;
  double recall;
  double f1;
} LrWeightedMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next call on the same thread.
 */
const char *lr_last_error(void);

/**
 * Highest probability of a distribution over `k` classes.
 *
 * # Safety
 * `probs` must point to `k` doubles and `out` to one.
 */
enum LrStatus lr_confidence(const double *probs, size_t k, double *out_conf);

/**
 * 1 when the base prediction is accepted (`confidence >= threshold`), 0 when
 * the depth is escalated.
 */
int32_t lr_decide(double confidence, double threshold);

/**
 * Coverage and selective accuracy at `grid_points` evenly spaced thresholds.
 * `correct[i]` is nonzero when sample `i` was classified correctly.
 *
 * # Safety
 * `conf` and `correct` hold `n` elements; each output holds `grid_points`.
 */
enum LrStatus lr_coverage_curve(const double *conf,
                                const uint8_t *correct,
                                size_t n,
                                size_t grid_points,
                                double *out_threshold,
                                double *out_coverage,
                                double *out_accuracy);

/**
 * Smallest grid threshold whose selective accuracy is within `epsilon` of
 * the best.
 *
 * # Safety
 * `conf` and `correct` hold `n` elements; `out_tau` points to one double.
 */
enum LrStatus lr_calibrate_threshold(const double *conf,
                                     const uint8_t *correct,
                                     size_t n,
                                     size_t grid_points,
                                     double epsilon,
                                     double *out_tau);

/**
 * Empty reference set of dimension `dim`; null when `dim` is 0.
 */
struct LrReferenceSet *lr_reference_new(size_t dim);

/**
 * # Safety
 * `set` comes from [`lr_reference_new`]; `point` holds `dim` doubles.
 */
enum LrStatus lr_reference_push(struct LrReferenceSet *set,
                                const double *point,
                                size_t dim,
                                uint32_t label);

/**
 * # Safety
 * `set` comes from [`lr_reference_new`] or is null.
 */
size_t lr_reference_len(const struct LrReferenceSet *set);

/**
 * # Safety
 * `set` comes from [`lr_reference_new`] or is null; it is not used afterwards.
 */
void lr_reference_free(struct LrReferenceSet *set);

/**
 * The `k` nearest reference points to `query` in Euclidean distance, nearest
 * first, ties by insertion index. Fewer than `k` are returned when the set
 * is smaller; `out_count` receives the number written.
 *
 * # Safety
 * `query` holds `dim` doubles; `out_index`, `out_label` and `out_distance`
 * hold `k` elements each.
 */
enum LrStatus lr_retrieve_neighbors(const struct LrReferenceSet *set,
                                    const double *query,
                                    size_t dim,
                                    size_t k,
                                    size_t *out_index,
                                    uint32_t *out_label,
                                    double *out_distance,
                                    size_t *out_count);

/**
 * Least-squares slope of `values` against their index.
 *
 * # Safety
 * `values` holds `n` doubles; `out_slope` points to one.
 */
enum LrStatus lr_ols_slope(const double *values, size_t n, double *out_slope);

/**
 * Removes runs shorter than `min_run` by relabelling them from a neighbour.
 *
 * # Safety
 * `labels` and `out_labels` hold `n` elements (they may alias).
 */
enum LrStatus lr_smooth_labels(const uint32_t *labels,
                               size_t n,
                               size_t min_run,
                               uint32_t *out_labels);

/**
 * Fraction of depths whose label differs from both neighbours.
 *
 * # Safety
 * `labels` holds `n` elements; `out_ratio` points to one double.
 */
enum LrStatus lr_flying_point_ratio(const uint32_t *labels, size_t n, double *out_ratio);

/**
 * Support-weighted precision, recall and F1 of a `k`×`k` confusion matrix
 * given row-major with rows as true classes.
 *
 * # Safety
 * `counts` holds `k * k` elements; `out_metrics` points to one struct.
 */
enum LrStatus lr_weighted_metrics(const uint64_t *counts,
                                  size_t k,
                                  struct LrWeightedMetrics *out_metrics);

/**
 * Loads a model file written by the training stage; null on failure.
 *
 * # Safety
 * `path` is a NUL-terminated string.
 */
struct LrModel *lr_model_load(const char *path);

/**
 * # Safety
 * `model` comes from [`lr_model_load`] or is null.
 */
size_t lr_model_num_classes(const struct LrModel *model);

/**
 * # Safety
 * `model` comes from [`lr_model_load`] or is null.
 */
size_t lr_model_num_channels(const struct LrModel *model);

/**
 * Class probabilities for every depth of one well. `values` is row-major
 * `[depth][channel]`, already normalized with the training statistics, with
 * channels in the model's order. Writes `n_depths * num_classes` doubles.
 *
 * # Safety
 * `values` holds `n_depths * n_channels` doubles and `out_probs`
 * `n_depths * lr_model_num_classes(model)`.
 */
enum LrStatus lr_model_predict(const struct LrModel *model,
                               const double *values,
                               size_t n_depths,
                               size_t n_channels,
                               double *out_probs);

/**
 * # Safety
 * `model` comes from [`lr_model_load`] or is null; it is not used afterwards.
 */
void lr_model_free(struct LrModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LITHOROUTE_H */
