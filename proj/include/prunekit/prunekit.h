/*
 * prunekit C API.
 *
 * Every object is an opaque handle owned by the caller and released with its
 * matching *_free function. Functions return a pk_status; on failure a
 * description is available from pk_last_error() on the calling thread until
 * the next API call on that thread. Strings returned through char** out
 * parameters are heap-allocated and must be released with pk_string_free().
 */
#ifndef PRUNEKIT_H
#define PRUNEKIT_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(PRUNEKIT_BUILDING_LIBRARY)
#    define PK_API __declspec(dllexport)
#  else
#    define PK_API __declspec(dllimport)
#  endif
#else
#  define PK_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pk_status {
  PK_OK = 0,
  PK_ERR_SHAPE = 1,
  PK_ERR_INDEX = 2,
  PK_ERR_SINGULAR = 3,
  PK_ERR_DEGENERATE_CALIBRATION = 4,
  PK_ERR_CONFIG = 5,
  PK_ERR_FORMAT = 6,
  PK_ERR_IO = 7,
  PK_ERR_INPUT = 8,
  PK_ERR_INVALID_RATIO = 9,
  PK_ERR_INVALID_ARGUMENT = 10,
  PK_ERR_INTERNAL = 11,
  /* The mask could not reach the requested count under the min-keep guards.
     Outputs are still produced. */
  PK_WARN_INFEASIBLE_RATIO = 100
} pk_status;

typedef struct pk_config pk_config;
typedef struct pk_model pk_model;
typedef struct pk_calibration pk_calibration;
typedef struct pk_scores pk_scores;
typedef struct pk_mask pk_mask;

PK_API const char* pk_version(void);
PK_API const char* pk_last_error(void);
PK_API const char* pk_status_name(pk_status status);
PK_API void pk_string_free(char* s);

/* Pipeline configuration (JSON). */
PK_API pk_status pk_config_default(pk_config** out);
PK_API pk_status pk_config_from_json(const char* json, pk_config** out);
PK_API pk_status pk_config_load(const char* path, pk_config** out);
/* Applies the keys present in overrides_json (a JSON merge patch). */
PK_API pk_status pk_config_merge_json(pk_config* config, const char* overrides_json);
PK_API pk_status pk_config_to_json(const pk_config* config, char** out_json);
PK_API void pk_config_free(pk_config* config);

/* Models (PTKM files). */
PK_API pk_status pk_model_init(const pk_config* config, pk_model** out);
PK_API pk_status pk_model_load(const char* path, pk_model** out);
PK_API pk_status pk_model_save(const pk_model* model, const char* path);
PK_API pk_status pk_model_info_json(const pk_model* model, char** out_json);
PK_API pk_status pk_model_parameter_count(const pk_model* model, uint64_t* out);
/* Logits for a byte sequence: out_logits receives len * vocab_size doubles. */
PK_API pk_status pk_model_forward(const pk_model* model, const uint8_t* bytes, size_t len,
                                  double* out_logits, size_t out_capacity);
/* 1 if both models hold identical configs and tensors, else 0. */
PK_API pk_status pk_model_equal(const pk_model* a, const pk_model* b, int* out_equal);
PK_API void pk_model_free(pk_model* model);

/* Calibration activations captured from a model on a text file. */
PK_API pk_status pk_calibration_capture(const pk_model* model, const pk_config* config,
                                        const char* text_path, pk_calibration** out);
PK_API pk_status pk_calibration_load(const char* path, pk_calibration** out);
PK_API pk_status pk_calibration_save(const pk_calibration* calib, const char* path);
PK_API void pk_calibration_free(pk_calibration* calib);

/* Newton-solved numerical scores for every layer. */
PK_API pk_status pk_scores_compute(const pk_model* model, const pk_calibration* calib,
                                   const pk_config* config, pk_scores** out);
PK_API pk_status pk_scores_load(const char* path, pk_scores** out);
PK_API pk_status pk_scores_save(const pk_scores* scores, const char* path);
PK_API void pk_scores_free(pk_scores* scores);

/* Global head/channel mask. Returns PK_WARN_INFEASIBLE_RATIO (with a valid
   mask in *out) when the min-keep guards cap the pruned count. */
PK_API pk_status pk_mask_build(const pk_scores* scores, const pk_config* config, pk_mask** out);
PK_API pk_status pk_mask_load(const char* path, pk_mask** out);
PK_API pk_status pk_mask_save(const pk_mask* mask, const char* path);
PK_API pk_status pk_mask_counts(const pk_mask* mask, uint64_t* requested, uint64_t* achieved);
PK_API void pk_mask_free(pk_mask* mask);

/* Structural pruning without compensation. */
PK_API pk_status pk_model_prune(const pk_model* model, const pk_mask* mask, pk_model** out);
/* Compensates W_o / W_down of the dense model, then prunes. */
PK_API pk_status pk_model_compensate(const pk_model* dense, const pk_mask* mask,
                                     const pk_calibration* calib, const pk_config* config,
                                     pk_model** out);

/* Evaluation report (JSON) of a pruned model and, optionally, a compensated
   one against the dense model. `compensated` may be NULL. */
PK_API pk_status pk_evaluate(const pk_config* config, const pk_model* dense, const pk_model* pruned,
                             const pk_model* compensated, const pk_calibration* calib,
                             const char* text_path, char** out_report_json);

/* End-to-end run on a dense model: calibrate, score, mask, prune, compensate, eval.
   On PK_WARN_INFEASIBLE_RATIO both outputs are still set. */
PK_API pk_status pk_pipeline_run(const pk_config* config, const pk_model* dense, const char* text_path,
                                 char** out_report_json, pk_model** out_model);

/* Report helpers. */
PK_API const char* pk_report_csv_header(void);
PK_API pk_status pk_report_csv_row(const char* report_json, char** out_row);
PK_API pk_status pk_report_summary(const char* report_json, char** out_text);
PK_API pk_status pk_report_strip_timing(const char* report_json, char** out_json);

#ifdef __cplusplus
}
#endif

#endif /* PRUNEKIT_H */
