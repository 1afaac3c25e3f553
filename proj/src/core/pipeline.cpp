#include "core/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "core/parallel.hpp"
#include "json.hpp"

namespace prunekit {

using nlohmann::json;

namespace {

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

json config_to_json_value(const PipelineConfig& c) {
  const ModelConfig& m = c.model;
  return {
      {"seed", m.seed},
      {"model",
       {{"vocab_size", m.vocab_size},
        {"n_layers", m.n_layers},
        {"d_model", m.d_model},
        {"n_heads", m.n_heads},
        {"d_inter", m.d_inter},
        {"max_seq", m.max_seq},
        {"silu_gate", m.silu_gate}}},
      {"ratio", c.ratio},
      {"lambda", c.lambda},
      {"newton_iters", c.newton_iters},
      {"clamp", c.clamp},
      {"gamma_rel", c.gamma_rel},
      {"damping", c.damping == DampingMode::kAuto ? "auto" : "always"},
      {"calib_samples", c.calib_samples},
      {"calib_seq_len", c.calib_seq_len},
      {"min_keep_heads", c.min_keep_heads},
      {"min_keep_channels", c.min_keep_channels},
      {"standardize_scores", c.standardize_scores},
      {"compensate", c.compensate},
  };
}

PipelineConfig config_from_json_value(const json& j) {
  if (!j.is_object()) throw ConfigError("config: top level must be an object");
  reject_unknown(j,
                 {"seed", "model", "ratio", "lambda", "newton_iters", "clamp", "gamma_rel", "damping",
                  "calib_samples", "calib_seq_len", "min_keep_heads", "min_keep_channels",
                  "standardize_scores", "compensate"},
                 "config");
  PipelineConfig c;
  read_key(j, "seed", c.model.seed);
  if (j.contains("model")) {
    const json& m = j.at("model");
    if (!m.is_object()) throw ConfigError("config: 'model' must be an object");
    reject_unknown(m, {"vocab_size", "n_layers", "d_model", "n_heads", "d_inter", "max_seq", "silu_gate"},
                   "config.model");
    read_key(m, "vocab_size", c.model.vocab_size);
    read_key(m, "n_layers", c.model.n_layers);
    read_key(m, "d_model", c.model.d_model);
    read_key(m, "n_heads", c.model.n_heads);
    read_key(m, "d_inter", c.model.d_inter);
    read_key(m, "max_seq", c.model.max_seq);
    read_key(m, "silu_gate", c.model.silu_gate);
  }
  read_key(j, "ratio", c.ratio);
  read_key(j, "lambda", c.lambda);
  read_key(j, "newton_iters", c.newton_iters);
  read_key(j, "clamp", c.clamp);
  read_key(j, "gamma_rel", c.gamma_rel);
  if (j.contains("damping")) {
    const auto mode = j.at("damping").get<std::string>();
    if (mode == "auto") {
      c.damping = DampingMode::kAuto;
    } else if (mode == "always") {
      c.damping = DampingMode::kAlways;
    } else {
      throw ConfigError("config: damping must be \"auto\" or \"always\"");
    }
  }
  read_key(j, "calib_samples", c.calib_samples);
  read_key(j, "calib_seq_len", c.calib_seq_len);
  read_key(j, "min_keep_heads", c.min_keep_heads);
  read_key(j, "min_keep_channels", c.min_keep_channels);
  read_key(j, "standardize_scores", c.standardize_scores);
  read_key(j, "compensate", c.compensate);
  c.validate();
  return c;
}

template <typename F>
auto timed(json& timing, const char* stage, F&& fn) {
  const auto start = std::chrono::steady_clock::now();
  auto result = fn();
  const std::chrono::duration<double> elapsed = std::chrono::steady_clock::now() - start;
  timing[stage] = elapsed.count();
  return result;
}

json nullable(double v, bool present) { return present ? json(v) : json(nullptr); }

}  // namespace

void PipelineConfig::validate() const {
  model.validate();
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("config: ratio must lie in [0, 1)");
  if (!(lambda > 0.0)) throw ConfigError("config: lambda must be positive");
  if (newton_iters == 0) throw ConfigError("config: newton_iters must be >= 1");
  if (!(gamma_rel >= 0.0)) throw ConfigError("config: gamma_rel must be >= 0");
  if (calib_samples == 0) throw ConfigError("config: calib_samples must be >= 1");
  if (calib_seq_len == 0 || calib_seq_len > model.max_seq) {
    throw ConfigError("config: calib_seq_len must lie in [1, max_seq]");
  }
}

PipelineConfig pipeline_config_from_json(std::string_view text) {
  try {
    return config_from_json_value(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

PipelineConfig merge_pipeline_config(const PipelineConfig& base, std::string_view overrides_json) {
  try {
    json merged = config_to_json_value(base);
    merged.merge_patch(json::parse(overrides_json));
    return config_from_json_value(merged);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config override: ") + e.what());
  }
}

std::string pipeline_config_to_json(const PipelineConfig& config) {
  return config_to_json_value(config).dump(2);
}

TextSplit split_text(std::string_view text, const PipelineConfig& config) {
  if (text.empty()) throw DegenerateCalibrationError("calibration text is empty");
  const std::size_t slice = config.calib_samples * config.calib_seq_len;
  TextSplit split;
  const std::string_view calib = text.substr(0, std::min(slice, text.size()));
  split.calibration = tokenize_bytes(calib, config.calib_seq_len, config.calib_samples);
  if (text.size() > calib.size()) {
    const std::string_view rest = text.substr(calib.size());
    split.heldout = tokenize_bytes(rest.substr(0, std::min(slice, rest.size())), config.calib_seq_len,
                                   config.calib_samples);
  }
  if (split.heldout.empty()) {
    split.heldout = split.calibration;
    split.heldout_fallback = true;
  }
  return split;
}

CalibrationSet calibrate(const ModelBundle& model, std::string_view text, const PipelineConfig& config) {
  return capture_activations(model, split_text(text, config).calibration);
}

ScoreBundle compute_scores(const ModelBundle& model, const CalibrationSet& calib,
                           const PipelineConfig& config,
                           std::vector<LayerScoreDiagnostics>* diagnostics) {
  const std::size_t layers = model.layers.size();
  if (calib.attn_proj_input.size() != layers || calib.mlp_down_input.size() != layers) {
    throw ShapeError("compute_scores: calibration covers " +
                     std::to_string(calib.attn_proj_input.size()) + " layers, model has " +
                     std::to_string(layers));
  }
  ScoreBundle bundle;
  bundle.head_dim = model.config.head_dim();
  bundle.layers.resize(layers);
  std::vector<LayerScoreDiagnostics> diag(layers);

  // Jobs 2l and 2l+1 are the attention and MLP problems of layer l.
  parallel_for(2 * layers, [&](std::size_t job) {
    const std::size_t l = job / 2;
    const bool attn = job % 2 == 0;
    const LayerWeights& lw = model.layers[l];
    const DenseMatrix& x_raw = attn ? calib.attn_proj_input[l] : calib.mlp_down_input[l];
    NormalizedCalibration norm = normalize_calibration(x_raw);
    ScoreProblem p;
    p.x = std::move(norm.x);
    p.w = attn ? lw.wo : lw.wdown;
    if (p.x.cols() != p.w.rows()) {
      throw ShapeError("compute_scores: calibration width differs from layer " + std::to_string(l));
    }
    const double d = static_cast<double>(p.w.rows());
    p.r = (1.0 - config.ratio) * d;
    p.lambda = config.lambda;
    p.newton_iters = config.newton_iters;
    p.clamp = config.clamp;
    ScoreSolution sol = newton_score(p, default_initial_point(p.w.rows(), config.ratio));
    if (attn) {
      bundle.layers[l].attn = sol.z;
      diag[l].attn = std::move(sol);
      diag[l].attn_stats = norm.stats;
    } else {
      bundle.layers[l].mlp = sol.z;
      diag[l].mlp = std::move(sol);
      diag[l].mlp_stats = norm.stats;
    }
  });
  if (diagnostics) *diagnostics = std::move(diag);
  return bundle;
}

GlobalMask make_mask(const ScoreBundle& scores, const PipelineConfig& config) {
  MaskOptions opts;
  opts.rho = config.ratio;
  opts.min_keep_heads = config.min_keep_heads;
  opts.min_keep_channels = config.min_keep_channels;
  opts.standardize_scores = config.standardize_scores;
  return build_masks(scores, opts);
}

CompensatedModel compensate_model(const ModelBundle& dense, const GlobalMask& mask,
                                  const CalibrationSet& calib, const PipelineConfig& config) {
  const std::size_t layers = dense.layers.size();
  if (mask.layers.size() != layers || calib.attn_proj_input.size() != layers) {
    throw ShapeError("compensate_model: mask, calibration and model disagree on layer count");
  }
  const std::size_t head_dim = dense.config.head_dim();
  CompensatedModel out;
  out.layers.resize(layers);
  ModelBundle updated = dense;

  parallel_for(2 * layers, [&](std::size_t job) {
    const std::size_t l = job / 2;
    const bool attn = job % 2 == 0;
    const LayerWeights& lw = dense.layers[l];
    const LayerMask& lm = mask.layers[l];
    if (lm.head_keep.size() != lw.n_heads() || lm.mlp_keep.size() != lw.n_channels()) {
      throw ShapeError("compensate_model: mask shape does not match layer " + std::to_string(l));
    }
    CompensationProblem p;
    p.x = attn ? calib.attn_proj_input[l] : calib.mlp_down_input[l];
    p.w = attn ? lw.wo : lw.wdown;
    p.gamma_rel = config.gamma_rel;
    p.damping = config.damping;
    if (attn) {
      for (std::size_t h = 0; h < lm.head_keep.size(); ++h)
        if (!lm.head_keep[h])
          for (std::size_t c = 0; c < head_dim; ++c) p.pruned_rows.push_back(h * head_dim + c);
    } else {
      for (std::size_t c = 0; c < lm.mlp_keep.size(); ++c)
        if (!lm.mlp_keep[c]) p.pruned_rows.push_back(c);
    }
    LayerCompensation& lc = out.layers[l];
    if (p.pruned_rows.empty()) return;
    CompensationResult res = compensate(p);
    const double naive = naive_zeroing_loss(p);
    DenseMatrix w_new = apply_compensation(p.w, res);
    if (attn) {
      lc.attn_pruned_rows = p.pruned_rows.size();
      lc.attn = std::move(res);
      lc.attn_naive_loss = naive;
      updated.layers[l].wo = std::move(w_new);
    } else {
      lc.mlp_pruned_rows = p.pruned_rows.size();
      lc.mlp = std::move(res);
      lc.mlp_naive_loss = naive;
      updated.layers[l].wdown = std::move(w_new);
    }
  });
  out.model = apply_prune(updated, mask);
  return out;
}

namespace {

json comparison_json(const ModelComparison& pruned, const ModelComparison* comp) {
  json m;
  m["ce_dense"] = pruned.ce_reference;
  m["ce_pruned"] = pruned.ce_candidate;
  m["ce_comp"] = nullable(comp ? comp->ce_candidate : 0.0, comp != nullptr);
  m["kl_pruned"] = pruned.kl;
  m["kl_comp"] = nullable(comp ? comp->kl : 0.0, comp != nullptr);
  m["logit_rel_error_pruned"] = pruned.logit_rel_error;
  m["logit_rel_error_comp"] = nullable(comp ? comp->logit_rel_error : 0.0, comp != nullptr);
  return m;
}

json projection_json(std::size_t pruned_rows, double uncomp_loss, double uncomp_mse,
                     const double* comp_loss, const double* comp_mse, const CompensationResult* res) {
  json j;
  j["pruned_rows"] = pruned_rows;
  j["loss_uncompensated"] = uncomp_loss;
  j["mse_uncompensated"] = uncomp_mse;
  j["loss_compensated"] = nullable(comp_loss ? *comp_loss : 0.0, comp_loss != nullptr);
  j["mse_compensated"] = nullable(comp_mse ? *comp_mse : 0.0, comp_mse != nullptr);
  j["loss_analytic"] = nullable(res ? res->optimal_loss : 0.0, res != nullptr);
  j["loss_achieved"] = nullable(res ? res->achieved_loss : 0.0, res != nullptr);
  j["gamma"] = nullable(res ? res->gamma_used : 0.0, res != nullptr);
  return j;
}

struct EvalInputs {
  const PipelineConfig* config;
  const ModelBundle* dense;
  const ModelBundle* pruned;
  const ModelBundle* compensated;
  const CalibrationSet* calib;
  const TextSplit* split;
  const CompensatedModel* comp_detail;  // may be null
};

json build_report(const EvalInputs& in, json& timing) {
  json report;
  report["format_version"] = kReportFormatVersion;
  report["config"] = config_to_json_value(*in.config);

  const ModelComparison pruned_cmp = timed(timing, "eval_pruned_s", [&] {
    return compare_models(*in.dense, *in.pruned, in.split->heldout);
  });
  ModelComparison comp_cmp;
  if (in.compensated) {
    comp_cmp = timed(timing, "eval_comp_s", [&] {
      return compare_models(*in.dense, *in.compensated, in.split->heldout);
    });
  }
  report["metrics"] = comparison_json(pruned_cmp, in.compensated ? &comp_cmp : nullptr);

  const ModelBundle& out_model = in.compensated ? *in.compensated : *in.pruned;
  const std::size_t before = in.dense->parameter_count();
  const std::size_t after = out_model.parameter_count();
  report["params"] = {{"before", before},
                      {"after", after},
                      {"reduction", before ? 1.0 - static_cast<double>(after) / static_cast<double>(before) : 0.0}};

  const auto recon_pruned = layer_reconstruction(*in.dense, *in.pruned, *in.calib);
  std::vector<LayerReconstruction> recon_comp;
  if (in.compensated) recon_comp = layer_reconstruction(*in.dense, *in.compensated, *in.calib);

  const std::size_t head_dim = in.dense->config.head_dim();
  report["layers"] = json::array();
  for (std::size_t l = 0; l < in.dense->layers.size(); ++l) {
    const LayerReconstruction& up = recon_pruned[l];
    const LayerReconstruction* cp = in.compensated ? &recon_comp[l] : nullptr;
    const LayerCompensation* detail = in.comp_detail ? &in.comp_detail->layers[l] : nullptr;
    const LayerWeights& pl = in.pruned->layers[l];
    const std::size_t attn_rows = (in.dense->layers[l].n_heads() - pl.n_heads()) * head_dim;
    const std::size_t mlp_rows = in.dense->layers[l].n_channels() - pl.n_channels();
    json layer;
    layer["layer"] = l;
    layer["heads_kept"] = pl.n_heads();
    layer["channels_kept"] = pl.n_channels();
    layer["attn_o"] = projection_json(attn_rows, up.attn_loss, up.attn_mse, cp ? &cp->attn_loss : nullptr,
                                      cp ? &cp->attn_mse : nullptr,
                                      detail && attn_rows ? &detail->attn : nullptr);
    layer["mlp_down"] = projection_json(mlp_rows, up.mlp_loss, up.mlp_mse, cp ? &cp->mlp_loss : nullptr,
                                        cp ? &cp->mlp_mse : nullptr,
                                        detail && mlp_rows ? &detail->mlp : nullptr);
    report["layers"].push_back(std::move(layer));
  }
  report["heldout"] = {{"sequences", in.split->heldout.size()},
                       {"fallback_to_calibration", in.split->heldout_fallback}};
  report["calibration"] = {{"sequences", in.calib->samples},
                           {"rows", in.calib->attn_proj_input.empty() ? 0 : in.calib->attn_proj_input[0].rows()}};
  return report;
}

json mask_summary(const GlobalMask& mask) {
  return {{"requested", mask.requested_items},
          {"achieved", mask.pruned_items},
          {"feasible", mask.feasible()},
          {"guard_triggered", mask.guard_triggered},
          {"eta", std::isfinite(mask.eta) ? json(mask.eta) : json(nullptr)}};
}

}  // namespace

PipelineOutcome run_pipeline(const PipelineConfig& config, const ModelBundle& dense, std::string_view text) {
  config.validate();
  if (dense.config.vocab_size != config.model.vocab_size) {
    throw ConfigError("pipeline: model vocabulary differs from config");
  }
  json timing;
  const TextSplit split = timed(timing, "split_s", [&] { return split_text(text, config); });
  const CalibrationSet calib =
      timed(timing, "calibrate_s", [&] { return capture_activations(dense, split.calibration); });
  std::vector<LayerScoreDiagnostics> diag;
  const ScoreBundle scores =
      timed(timing, "score_s", [&] { return compute_scores(dense, calib, config, &diag); });
  const GlobalMask mask = timed(timing, "mask_s", [&] { return make_mask(scores, config); });
  const ModelBundle pruned = timed(timing, "prune_s", [&] { return apply_prune(dense, mask); });
  CompensatedModel comp;
  if (config.compensate) {
    comp = timed(timing, "compensate_s", [&] { return compensate_model(dense, mask, calib, config); });
  }

  EvalInputs in{&config, &dense, &pruned, config.compensate ? &comp.model : nullptr, &calib, &split,
                config.compensate ? &comp : nullptr};
  json report = build_report(in, timing);
  report["pruned_items"] = mask_summary(mask);
  report["scores"] = json::array();
  for (std::size_t l = 0; l < diag.size(); ++l) {
    const LayerScoreDiagnostics& d = diag[l];
    report["scores"].push_back({{"layer", l},
                                {"attn_objective", d.attn.objective},
                                {"attn_grad_inf_norm", d.attn.grad_inf_norm},
                                {"attn_clamp_active", d.attn.clamp_active},
                                {"attn_input_norm", d.attn_stats.spectral_norm},
                                {"mlp_objective", d.mlp.objective},
                                {"mlp_grad_inf_norm", d.mlp.grad_inf_norm},
                                {"mlp_clamp_active", d.mlp.clamp_active},
                                {"mlp_input_norm", d.mlp_stats.spectral_norm}});
  }
  report["flags"] = {{"infeasible_ratio", !mask.feasible()},
                     {"heldout_fallback", split.heldout_fallback}};
  report["timing"] = timing;

  PipelineOutcome outcome;
  outcome.model = config.compensate ? std::move(comp.model) : pruned;
  outcome.report = report.dump(2);
  outcome.feasible = mask.feasible();
  return outcome;
}

std::string evaluate_models(const PipelineConfig& config, const ModelBundle& dense,
                            const ModelBundle& pruned, const ModelBundle* compensated,
                            const CalibrationSet& calib, std::string_view text) {
  config.validate();
  json timing;
  const TextSplit split = split_text(text, config);
  EvalInputs in{&config, &dense, &pruned, compensated, &calib, &split, nullptr};
  json report = build_report(in, timing);
  report["flags"] = {{"heldout_fallback", split.heldout_fallback}};
  report["timing"] = timing;
  return report.dump(2);
}

namespace {

json parse_report(std::string_view text) {
  try {
    json doc = json::parse(text);
    if (!doc.is_object() || !doc.contains("metrics") || !doc.contains("params") ||
        !doc.contains("config")) {
      throw FormatError("report: missing metrics/params/config");
    }
    return doc;
  } catch (const json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

std::string fmt_num(const json& v) {
  if (v.is_null()) return "";
  char buf[64];
  if (v.is_number_integer() || v.is_number_unsigned()) {
    std::snprintf(buf, sizeof buf, "%llu", static_cast<unsigned long long>(v.get<std::uint64_t>()));
  } else {
    std::snprintf(buf, sizeof buf, "%.10g", v.get<double>());
  }
  return buf;
}

}  // namespace

std::string report_csv_row(std::string_view report_json) {
  const json doc = parse_report(report_json);
  try {
    const json& m = doc.at("metrics");
    const json& p = doc.at("params");
    std::ostringstream os;
    os << fmt_num(doc.at("config").at("ratio")) << ',' << fmt_num(m.at("ce_dense")) << ','
       << fmt_num(m.at("ce_pruned")) << ',' << fmt_num(m.at("ce_comp")) << ','
       << fmt_num(m.at("kl_pruned")) << ',' << fmt_num(m.at("kl_comp")) << ','
       << fmt_num(p.at("before")) << ',' << fmt_num(p.at("after"));
    return os.str();
  } catch (const json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

std::string report_summary(std::string_view report_json) {
  const json doc = parse_report(report_json);
  try {
    const json& m = doc.at("metrics");
    const json& p = doc.at("params");
    std::ostringstream os;
    os << "ratio            " << fmt_num(doc.at("config").at("ratio")) << '\n';
    os << "params           " << fmt_num(p.at("before")) << " -> " << fmt_num(p.at("after")) << " ("
       << fmt_num(p.at("reduction")) << " removed)\n";
    if (doc.contains("pruned_items")) {
      const json& pi = doc.at("pruned_items");
      os << "pruned items     " << fmt_num(pi.at("achieved")) << " of " << fmt_num(pi.at("requested"))
         << " requested" << (pi.at("feasible").get<bool>() ? "" : "  [INFEASIBLE]") << '\n';
    }
    os << "cross-entropy    dense " << fmt_num(m.at("ce_dense")) << "  pruned " << fmt_num(m.at("ce_pruned"))
       << "  compensated " << (m.at("ce_comp").is_null() ? "-" : fmt_num(m.at("ce_comp"))) << '\n';
    os << "KL(dense||.)     pruned " << fmt_num(m.at("kl_pruned")) << "  compensated "
       << (m.at("kl_comp").is_null() ? "-" : fmt_num(m.at("kl_comp"))) << '\n';
    if (doc.contains("layers")) {
      os << "layer  proj      rows  loss_uncomp       loss_comp         loss_analytic\n";
      for (const json& l : doc.at("layers")) {
        for (const char* proj : {"attn_o", "mlp_down"}) {
          const json& j = l.at(proj);
          char line[256];
          std::snprintf(line, sizeof line, "%-6s %-9s %-5s %-17s %-17s %s\n",
                        fmt_num(l.at("layer")).c_str(), proj, fmt_num(j.at("pruned_rows")).c_str(),
                        fmt_num(j.at("loss_uncompensated")).c_str(),
                        j.at("loss_compensated").is_null() ? "-" : fmt_num(j.at("loss_compensated")).c_str(),
                        j.at("loss_analytic").is_null() ? "-" : fmt_num(j.at("loss_analytic")).c_str());
          os << line;
        }
      }
    }
    return os.str();
  } catch (const json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
}

std::string strip_timing(std::string_view report_json) {
  json doc = parse_report(report_json);
  doc.erase("timing");
  return doc.dump(2);
}

}  // namespace prunekit
