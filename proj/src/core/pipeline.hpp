#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "core/compensation.hpp"
#include "core/global_mask.hpp"
#include "core/newton_score.hpp"
#include "core/transformer.hpp"

namespace prunekit {

inline constexpr int kReportFormatVersion = 1;

struct PipelineConfig {
  ModelConfig model;  // model.seed doubles as the pipeline seed
  double ratio = 0.2;
  double lambda = 100.0;
  std::size_t newton_iters = 50;
  bool clamp = true;
  double gamma_rel = 0.01;
  DampingMode damping = DampingMode::kAuto;
  std::size_t calib_samples = 128;
  std::size_t calib_seq_len = 32;
  std::size_t min_keep_heads = 1;
  std::size_t min_keep_channels = 1;
  bool standardize_scores = false;
  bool compensate = true;

  void validate() const;  // throws ConfigError / InvalidRatioError
};

// Strict parse: unknown keys are rejected, missing keys keep their defaults.
PipelineConfig pipeline_config_from_json(std::string_view text);
// Applies the keys present in `overrides_json` on top of `base`.
PipelineConfig merge_pipeline_config(const PipelineConfig& base, std::string_view overrides_json);
std::string pipeline_config_to_json(const PipelineConfig& config);

struct TextSplit {
  std::vector<TokenSequence> calibration;
  std::vector<TokenSequence> heldout;
  bool heldout_fallback = false;  // held-out slice was empty; calibration reused
};

// The first calib_samples * calib_seq_len bytes calibrate, the next slice of
// the same size is held out for evaluation.
TextSplit split_text(std::string_view text, const PipelineConfig& config);

CalibrationSet calibrate(const ModelBundle& model, std::string_view text, const PipelineConfig& config);

struct LayerScoreDiagnostics {
  ScoreSolution attn;
  ScoreSolution mlp;
  CalibrationStats attn_stats;
  CalibrationStats mlp_stats;
};

// One Newton score problem per projection: (attention input, W_o) and
// (MLP input, W_down), each with r = (1 - ratio) * D.
ScoreBundle compute_scores(const ModelBundle& model, const CalibrationSet& calib,
                           const PipelineConfig& config,
                           std::vector<LayerScoreDiagnostics>* diagnostics = nullptr);

GlobalMask make_mask(const ScoreBundle& scores, const PipelineConfig& config);

struct LayerCompensation {
  std::size_t attn_pruned_rows = 0;
  std::size_t mlp_pruned_rows = 0;
  CompensationResult attn;
  CompensationResult mlp;
  double attn_naive_loss = 0.0;
  double mlp_naive_loss = 0.0;
};

struct CompensatedModel {
  ModelBundle model;  // pruned and compensated
  std::vector<LayerCompensation> layers;
};

// Compensates W_o and W_down of the dense model on its own calibration
// activations, then removes the pruned rows/columns.
CompensatedModel compensate_model(const ModelBundle& dense, const GlobalMask& mask,
                                  const CalibrationSet& calib, const PipelineConfig& config);

struct PipelineOutcome {
  ModelBundle model;   // compensated unless config.compensate is false
  std::string report;  // JSON
  bool feasible = true;
};

PipelineOutcome run_pipeline(const PipelineConfig& config, const ModelBundle& dense,
                             std::string_view text);

// Stand-alone evaluation of an already pruned model (and optionally a
// compensated one) against the dense model.
std::string evaluate_models(const PipelineConfig& config, const ModelBundle& dense,
                            const ModelBundle& pruned, const ModelBundle* compensated,
                            const CalibrationSet& calib, std::string_view text);

inline constexpr const char* kCsvHeader =
    "ratio,ce_dense,ce_pruned,ce_comp,kl_pruned,kl_comp,params_before,params_after";

std::string report_csv_row(std::string_view report_json);
std::string report_summary(std::string_view report_json);

// Removes the "timing" object so reports can be compared byte-for-byte.
std::string strip_timing(std::string_view report_json);

}  // namespace prunekit
