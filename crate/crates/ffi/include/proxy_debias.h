#ifndef PROXY_DEBIAS_H
#define PROXY_DEBIAS_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Largest number of bias attributes [`PdMetrics`] can hold.
 */
#define PD_MAX_BIAS 8

typedef enum PdStatus {
  PD_STATUS_OK = 0,
  PD_STATUS_SHAPE = 1,
  PD_STATUS_INDEX = 2,
  PD_STATUS_CONTRACT = 3,
  PD_STATUS_NUMERIC = 4,
  PD_STATUS_CONFIG = 5,
  PD_STATUS_RESOURCE = 6,
  PD_STATUS_UNDEFINED_RATE = 7,
  PD_STATUS_PARSE = 8,
  PD_STATUS_IO = 9,
  PD_STATUS_NULL_POINTER = 10,
  PD_STATUS_INVALID_ARGUMENT = 11,
  PD_STATUS_PANIC = 12,
} PdStatus;

typedef enum PdMode {
  PD_MODE_VANILLA = 0,
  PD_MODE_NAIVE_PD = 1,
  PD_MODE_ACTIVE_PD = 2,
} PdMode;

/**
 * Opaque dataset handle.
 */
typedef struct PdDataset PdDataset;

/**
 * Opaque trained-model handle.
 */
typedef struct PdModel PdModel;

/**
 * Training options. Start from [`pd_train_params_default`].
 */
typedef struct PdTrainParams {
  enum PdMode mode;
  uint64_t seed;
  size_t epochs;
  size_t batch_size;
  double learning_rate;
  double weight_decay;
  double enhancement_learning_rate;
  /**
   * Proxy width used for every bias attribute.
   */
  size_t proxy_dim;
  /**
   * Hidden layer widths; null with `hidden_len == 0` keeps the default.
   */
  const size_t *hidden;
  size_t hidden_len;
} PdTrainParams;

/**
 * Evaluation results; arrays hold `num_bias` meaningful entries.
 */
typedef struct PdMetrics {
  double accuracy;
  size_t n_evaluated;
  size_t num_bias;
  double equalodds[PD_MAX_BIAS];
  double equal_opportunity[PD_MAX_BIAS];
  double statistical_parity[PD_MAX_BIAS];
  double counter_p[PD_MAX_BIAS];
} PdMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a
 * success. Valid until the next library call on the same thread.
 */
const char *pd_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pd_version(void);

/**
 * Draws a dataset from a generator config given as JSON. With `balanced`
 * set, builds the balanced evaluation set of `n_test` samples instead.
 */
enum PdStatus pd_dataset_generate(const char *config_json, bool balanced, struct PdDataset **out);

/**
 * Reference generator with `k` bias attributes coupled by `rho[0..k]`.
 */
enum PdStatus pd_dataset_generate_reference(const double *rho,
                                            size_t k,
                                            uint64_t seed,
                                            bool balanced,
                                            struct PdDataset **out);

enum PdStatus pd_dataset_load_csv(const char *path, struct PdDataset **out);

enum PdStatus pd_dataset_save_csv(const struct PdDataset *ds, const char *path);

/**
 * Number of samples; 0 for a null handle.
 */
size_t pd_dataset_len(const struct PdDataset *ds);

size_t pd_dataset_feature_dim(const struct PdDataset *ds);

size_t pd_dataset_num_bias(const struct PdDataset *ds);

/**
 * Releases a dataset. Null is ignored.
 */
void pd_dataset_free(struct PdDataset *ds);

/**
 * Library defaults for `mode` and `seed`.
 */
struct PdTrainParams pd_train_params_default(enum PdMode mode, uint64_t seed);

enum PdStatus pd_model_train(const struct PdDataset *ds,
                             const struct PdTrainParams *params,
                             struct PdModel **out);

/**
 * Reads a model file written by the command-line tool or [`pd_model_save`].
 */
enum PdStatus pd_model_load(const char *path, struct PdModel **out);

/**
 * Writes the model in the command-line tool's format. The config hash
 * covers the stored model and training configs.
 */
enum PdStatus pd_model_save(const struct PdModel *model, const char *path);

size_t pd_model_input_dim(const struct PdModel *model);

size_t pd_model_num_classes(const struct PdModel *model);

/**
 * Scores interventional predictions on `ds`.
 */
enum PdStatus pd_model_evaluate(const struct PdModel *model,
                                const struct PdDataset *ds,
                                struct PdMetrics *out);

/**
 * Interventional class probabilities for a row-major `rows × cols` input.
 * `out` must hold `rows × num_classes` values; `out_len` is its capacity.
 */
enum PdStatus pd_model_predict(const struct PdModel *model,
                               const double *x,
                               size_t rows,
                               size_t cols,
                               double *out,
                               size_t out_len);

/**
 * Releases a model. Null is ignored.
 */
void pd_model_free(struct PdModel *model);

/**
 * Whether `ds` was produced by the generator (as opposed to a CSV file).
 */
bool pd_dataset_is_generated(const struct PdDataset *ds);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PROXY_DEBIAS_H */
