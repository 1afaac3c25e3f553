#include "prunekit/prunekit.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "core/errors.hpp"
#include "core/pipeline.hpp"
#include "core/ptkm.hpp"

struct pk_config {
  prunekit::PipelineConfig value;
};
struct pk_model {
  prunekit::ModelBundle value;
};
struct pk_calibration {
  prunekit::CalibrationSet value;
};
struct pk_scores {
  prunekit::ScoreBundle value;
};
struct pk_mask {
  prunekit::GlobalMask value;
};

namespace {

thread_local std::string g_last_error;

template <typename F>
pk_status guarded(F&& fn) {
  g_last_error.clear();
  try {
    return fn();
  } catch (const prunekit::Error& e) {
    g_last_error = e.what();
    return static_cast<pk_status>(static_cast<int>(e.code()));
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return PK_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return PK_ERR_INTERNAL;
  }
}

pk_status null_arg(const char* what) {
  g_last_error = std::string("null argument: ") + what;
  return PK_ERR_INVALID_ARGUMENT;
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

std::string read_text(const char* path) {
  const auto bytes = prunekit::read_file(path);
  return {bytes.begin(), bytes.end()};
}

}  // namespace

#define PK_REQUIRE(ptr) \
  do {                  \
    if (!(ptr)) return null_arg(#ptr); \
  } while (0)

extern "C" {

const char* pk_version(void) { return "0.1.0"; }

const char* pk_last_error(void) { return g_last_error.c_str(); }

const char* pk_status_name(pk_status status) {
  switch (status) {
    case PK_OK: return "ok";
    case PK_ERR_SHAPE: return "shape error";
    case PK_ERR_INDEX: return "index error";
    case PK_ERR_SINGULAR: return "singular matrix";
    case PK_ERR_DEGENERATE_CALIBRATION: return "degenerate calibration";
    case PK_ERR_CONFIG: return "config error";
    case PK_ERR_FORMAT: return "format error";
    case PK_ERR_IO: return "i/o error";
    case PK_ERR_INPUT: return "input error";
    case PK_ERR_INVALID_RATIO: return "invalid ratio";
    case PK_ERR_INVALID_ARGUMENT: return "invalid argument";
    case PK_ERR_INTERNAL: return "internal error";
    case PK_WARN_INFEASIBLE_RATIO: return "infeasible ratio";
  }
  return "unknown status";
}

void pk_string_free(char* s) { std::free(s); }

pk_status pk_config_default(pk_config** out) {
  PK_REQUIRE(out);
  return guarded([&] {
    *out = new pk_config{};
    return PK_OK;
  });
}

pk_status pk_config_from_json(const char* json, pk_config** out) {
  PK_REQUIRE(json);
  PK_REQUIRE(out);
  return guarded([&] {
    *out = new pk_config{prunekit::pipeline_config_from_json(json)};
    return PK_OK;
  });
}

pk_status pk_config_load(const char* path, pk_config** out) {
  PK_REQUIRE(path);
  PK_REQUIRE(out);
  return guarded([&] {
    std::string text;
    try {
      text = read_text(path);
    } catch (const prunekit::IoError& e) {
      throw prunekit::ConfigError(e.what());
    }
    *out = new pk_config{prunekit::pipeline_config_from_json(text)};
    return PK_OK;
  });
}

pk_status pk_config_merge_json(pk_config* config, const char* overrides_json) {
  PK_REQUIRE(config);
  PK_REQUIRE(overrides_json);
  return guarded([&] {
    config->value = prunekit::merge_pipeline_config(config->value, overrides_json);
    return PK_OK;
  });
}

pk_status pk_config_to_json(const pk_config* config, char** out_json) {
  PK_REQUIRE(config);
  PK_REQUIRE(out_json);
  return guarded([&] {
    *out_json = dup_string(prunekit::pipeline_config_to_json(config->value));
    return PK_OK;
  });
}

void pk_config_free(pk_config* config) { delete config; }

pk_status pk_model_init(const pk_config* config, pk_model** out) {
  PK_REQUIRE(config);
  PK_REQUIRE(out);
  return guarded([&] {
    *out = new pk_model{prunekit::init_model(config->value.model)};
    return PK_OK;
  });
}

pk_status pk_model_load(const char* path, pk_model** out) {
  PK_REQUIRE(path);
  PK_REQUIRE(out);
  return guarded([&] {
    *out = new pk_model{prunekit::decode_model(prunekit::read_file(path))};
    return PK_OK;
  });
}

pk_status pk_model_save(const pk_model* model, const char* path) {
  PK_REQUIRE(model);
  PK_REQUIRE(path);
  return guarded([&] {
    prunekit::write_file(path, prunekit::encode_model(model->value));
    return PK_OK;
  });
}

pk_status pk_model_info_json(const pk_model* model, char** out_json) {
  PK_REQUIRE(model);
  PK_REQUIRE(out_json);
  return guarded([&] {
    const auto& m = model->value;
    std::string s = "{\"config\":" + prunekit::model_config_to_json(m.config) +
                    ",\"parameters\":" + std::to_string(m.parameter_count()) + ",\"layers\":[";
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      if (l) s += ',';
      s += "{\"heads\":" + std::to_string(m.layers[l].n_heads()) +
           ",\"channels\":" + std::to_string(m.layers[l].n_channels()) + "}";
    }
    s += "]}";
    *out_json = dup_string(s);
    return PK_OK;
  });
}

pk_status pk_model_parameter_count(const pk_model* model, uint64_t* out) {
  PK_REQUIRE(model);
  PK_REQUIRE(out);
  *out = model->value.parameter_count();
  return PK_OK;
}

pk_status pk_model_forward(const pk_model* model, const uint8_t* bytes, size_t len, double* out_logits,
                           size_t out_capacity) {
  PK_REQUIRE(model);
  PK_REQUIRE(bytes);
  PK_REQUIRE(out_logits);
  return guarded([&] {
    prunekit::TokenSequence seq(bytes, bytes + len);
    const prunekit::DenseMatrix logits = prunekit::forward(model->value, seq);
    if (out_capacity < logits.size()) {
      throw prunekit::ShapeError("pk_model_forward: output buffer holds " + std::to_string(out_capacity) +
                                 " values, need " + std::to_string(logits.size()));
    }
    std::memcpy(out_logits, logits.data().data(), logits.size() * sizeof(double));
    return PK_OK;
  });
}

pk_status pk_model_equal(const pk_model* a, const pk_model* b, int* out_equal) {
  PK_REQUIRE(a);
  PK_REQUIRE(b);
  PK_REQUIRE(out_equal);
  return guarded([&] {
    *out_equal = prunekit::encode_model(a->value) == prunekit::encode_model(b->value) ? 1 : 0;
    return PK_OK;
  });
}

void pk_model_free(pk_model* model) { delete model; }

pk_status pk_calibration_capture(const pk_model* model, const pk_config* config, const char* text_path,
                                 pk_calibration** out) {
  PK_REQUIRE(model);
  PK_REQUIRE(config);
  PK_REQUIRE(text_path);
  PK_REQUIRE(out);
  return guarded([&] {
    *out = new pk_calibration{prunekit::calibrate(model->value, read_text(text_path), config->value)};
    return PK_OK;
  });
}

pk_status pk_calibration_load(const char* path, pk_calibration** out) {
  PK_REQUIRE(path);
  PK_REQUIRE(out);
  return guarded([&] {
    *out = new pk_calibration{prunekit::decode_calibration(prunekit::read_file(path))};
    return PK_OK;
  });
}

pk_status pk_calibration_save(const pk_calibration* calib, const char* path) {
  PK_REQUIRE(calib);
  PK_REQUIRE(path);
  return guarded([&] {
    prunekit::write_file(path, prunekit::encode_calibration(calib->value));
    return PK_OK;
  });
}

void pk_calibration_free(pk_calibration* calib) { delete calib; }

pk_status pk_scores_compute(const pk_model* model, const pk_calibration* calib, const pk_config* config,
                            pk_scores** out) {
  PK_REQUIRE(model);
  PK_REQUIRE(calib);
  PK_REQUIRE(config);
  PK_REQUIRE(out);
  return guarded([&] {
    *out = new pk_scores{prunekit::compute_scores(model->value, calib->value, config->value)};
    return PK_OK;
  });
}

pk_status pk_scores_load(const char* path, pk_scores** out) {
  PK_REQUIRE(path);
  PK_REQUIRE(out);
  return guarded([&] {
    *out = new pk_scores{prunekit::scores_from_json(read_text(path))};
    return PK_OK;
  });
}

pk_status pk_scores_save(const pk_scores* scores, const char* path) {
  PK_REQUIRE(scores);
  PK_REQUIRE(path);
  return guarded([&] {
    prunekit::write_file(path, prunekit::scores_to_json(scores->value));
    return PK_OK;
  });
}

void pk_scores_free(pk_scores* scores) { delete scores; }

pk_status pk_mask_build(const pk_scores* scores, const pk_config* config, pk_mask** out) {
  PK_REQUIRE(scores);
  PK_REQUIRE(config);
  PK_REQUIRE(out);
  return guarded([&] {
    *out = new pk_mask{prunekit::make_mask(scores->value, config->value)};
    return (*out)->value.feasible() ? PK_OK : PK_WARN_INFEASIBLE_RATIO;
  });
}

pk_status pk_mask_load(const char* path, pk_mask** out) {
  PK_REQUIRE(path);
  PK_REQUIRE(out);
  return guarded([&] {
    *out = new pk_mask{prunekit::mask_from_json(read_text(path))};
    return PK_OK;
  });
}

pk_status pk_mask_save(const pk_mask* mask, const char* path) {
  PK_REQUIRE(mask);
  PK_REQUIRE(path);
  return guarded([&] {
    prunekit::write_file(path, prunekit::mask_to_json(mask->value));
    return PK_OK;
  });
}

pk_status pk_mask_counts(const pk_mask* mask, uint64_t* requested, uint64_t* achieved) {
  PK_REQUIRE(mask);
  if (requested) *requested = mask->value.requested_items;
  if (achieved) *achieved = mask->value.pruned_items;
  return PK_OK;
}

void pk_mask_free(pk_mask* mask) { delete mask; }

pk_status pk_model_prune(const pk_model* model, const pk_mask* mask, pk_model** out) {
  PK_REQUIRE(model);
  PK_REQUIRE(mask);
  PK_REQUIRE(out);
  return guarded([&] {
    *out = new pk_model{prunekit::apply_prune(model->value, mask->value)};
    return PK_OK;
  });
}

pk_status pk_model_compensate(const pk_model* dense, const pk_mask* mask, const pk_calibration* calib,
                              const pk_config* config, pk_model** out) {
  PK_REQUIRE(dense);
  PK_REQUIRE(mask);
  PK_REQUIRE(calib);
  PK_REQUIRE(config);
  PK_REQUIRE(out);
  return guarded([&] {
    *out = new pk_model{
        prunekit::compensate_model(dense->value, mask->value, calib->value, config->value).model};
    return PK_OK;
  });
}

pk_status pk_evaluate(const pk_config* config, const pk_model* dense, const pk_model* pruned,
                      const pk_model* compensated, const pk_calibration* calib, const char* text_path,
                      char** out_report_json) {
  PK_REQUIRE(config);
  PK_REQUIRE(dense);
  PK_REQUIRE(pruned);
  PK_REQUIRE(calib);
  PK_REQUIRE(text_path);
  PK_REQUIRE(out_report_json);
  return guarded([&] {
    const std::string report = prunekit::evaluate_models(
        config->value, dense->value, pruned->value, compensated ? &compensated->value : nullptr,
        calib->value, read_text(text_path));
    *out_report_json = dup_string(report);
    return PK_OK;
  });
}

pk_status pk_pipeline_run(const pk_config* config, const pk_model* dense, const char* text_path,
                          char** out_report_json, pk_model** out_model) {
  PK_REQUIRE(config);
  PK_REQUIRE(dense);
  PK_REQUIRE(text_path);
  PK_REQUIRE(out_report_json);
  PK_REQUIRE(out_model);
  return guarded([&] {
    prunekit::PipelineOutcome outcome =
        prunekit::run_pipeline(config->value, dense->value, read_text(text_path));
    *out_report_json = dup_string(outcome.report);
    *out_model = new pk_model{std::move(outcome.model)};
    return outcome.feasible ? PK_OK : PK_WARN_INFEASIBLE_RATIO;
  });
}

const char* pk_report_csv_header(void) { return prunekit::kCsvHeader; }

pk_status pk_report_csv_row(const char* report_json, char** out_row) {
  PK_REQUIRE(report_json);
  PK_REQUIRE(out_row);
  return guarded([&] {
    *out_row = dup_string(prunekit::report_csv_row(report_json));
    return PK_OK;
  });
}

pk_status pk_report_summary(const char* report_json, char** out_text) {
  PK_REQUIRE(report_json);
  PK_REQUIRE(out_text);
  return guarded([&] {
    *out_text = dup_string(prunekit::report_summary(report_json));
    return PK_OK;
  });
}

pk_status pk_report_strip_timing(const char* report_json, char** out_json) {
  PK_REQUIRE(report_json);
  PK_REQUIRE(out_json);
  return guarded([&] {
    *out_json = dup_string(prunekit::strip_timing(report_json));
    return PK_OK;
  });
}

}  // extern "C"
