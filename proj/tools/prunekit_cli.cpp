// prunekit command-line front end. Talks to the library only through the C API.
//
// Exit codes: 0 success, 1 runtime/I-O failure, 2 bad config / usage /
// malformed input file, 3 requested ratio infeasible under the min-keep
// guards (outputs still written), 4 degenerate calibration.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "prunekit/prunekit.h"

namespace fs = std::filesystem;

namespace {

enum ExitCode { kExitOk = 0, kExitFailure = 1, kExitBadInput = 2, kExitInfeasible = 3, kExitDegenerate = 4 };

int exit_code_for(pk_status s) {
  switch (s) {
    case PK_OK: return kExitOk;
    case PK_WARN_INFEASIBLE_RATIO: return kExitInfeasible;
    case PK_ERR_DEGENERATE_CALIBRATION: return kExitDegenerate;
    case PK_ERR_CONFIG:
    case PK_ERR_FORMAT:
    case PK_ERR_INVALID_RATIO:
    case PK_ERR_INPUT: return kExitBadInput;
    default: return kExitFailure;
  }
}

// Thrown to unwind to main with an exit code after printing the diagnostic.
struct Exit {
  int code;
};

pk_status check(pk_status s, const char* what) {
  if (s == PK_OK) return s;
  if (s == PK_WARN_INFEASIBLE_RATIO) {
    std::cerr << "warning: " << what << ": requested ratio is infeasible under the min-keep guards\n";
    return s;
  }
  std::cerr << "error: " << what << ": " << pk_status_name(s) << ": " << pk_last_error() << "\n";
  throw Exit{exit_code_for(s)};
}

template <typename T, void (*Free)(T*)>
struct Handle {
  T* ptr = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() { Free(ptr); }
  T** out() { return &ptr; }
  T* get() const { return ptr; }
};

using Config = Handle<pk_config, pk_config_free>;
using Model = Handle<pk_model, pk_model_free>;
using Calibration = Handle<pk_calibration, pk_calibration_free>;
using Scores = Handle<pk_scores, pk_scores_free>;
using Mask = Handle<pk_mask, pk_mask_free>;

struct OwnedString {
  char* ptr = nullptr;
  ~OwnedString() { pk_string_free(ptr); }
  char** out() { return &ptr; }
  std::string str() const { return ptr ? ptr : ""; }
};

struct Overrides {
  std::optional<double> ratio, lambda, gamma_rel;
  std::optional<std::size_t> iters;
  std::optional<std::uint64_t> seed;
  bool no_compensate = false;

  std::string json() const {
    std::ostringstream os;
    os.precision(17);
    os << '{';
    bool first = true;
    auto key = [&](const char* k) {
      if (!first) os << ',';
      first = false;
      os << '"' << k << "\":";
    };
    if (ratio) key("ratio"), os << *ratio;
    if (lambda) key("lambda"), os << *lambda;
    if (gamma_rel) key("gamma_rel"), os << *gamma_rel;
    if (iters) key("newton_iters"), os << *iters;
    if (seed) key("seed"), os << *seed;
    if (no_compensate) key("compensate"), os << "false";
    os << '}';
    return os.str();
  }
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--ratio", o.ratio, "Global pruning ratio in [0, 1)");
  cmd->add_option("--lambda", o.lambda, "Penalty weight of the kept-count constraint");
  cmd->add_option("--iters", o.iters, "Newton iterations");
  cmd->add_option("--gamma-rel", o.gamma_rel, "Dampening as a fraction of mean(diag(2X^TX))");
  cmd->add_option("--seed", o.seed, "Model seed");
}

void load_config(Config& cfg, const std::string& path, const Overrides& o) {
  if (path.empty()) {
    check(pk_config_default(cfg.out()), "config");
  } else {
    check(pk_config_load(path.c_str(), cfg.out()), "config");
  }
  check(pk_config_merge_json(cfg.get(), o.json().c_str()), "config override");
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    std::cerr << "error: cannot write " << path << "\n";
    throw Exit{kExitFailure};
  }
  out << text;
}

std::optional<std::string> read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) return std::nullopt;
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int run_report(const std::vector<std::string>& inputs, const std::string& csv_path) {
  std::vector<fs::path> files;
  for (const std::string& in : inputs) {
    if (fs::is_directory(in)) {
      for (const auto& entry : fs::directory_iterator(in))
        if (entry.is_regular_file() && entry.path().extension() == ".json") files.push_back(entry.path());
    } else {
      files.emplace_back(in);
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    std::cout << "no reports found\n";
    return kExitOk;
  }

  struct Row {
    double ratio;
    std::string line;
    std::vector<std::string> cells;
  };
  std::vector<Row> rows;
  for (const fs::path& f : files) {
    const auto text = read_text(f);
    if (!text) {
      std::cerr << "error: cannot read " << f << "\n";
      return kExitFailure;
    }
    OwnedString summary, row;
    pk_status s = pk_report_summary(text->c_str(), summary.out());
    if (s != PK_OK) {
      std::cerr << "error: " << f.string() << ": " << pk_last_error() << "\n";
      return kExitBadInput;
    }
    check(pk_report_csv_row(text->c_str(), row.out()), "report");
    std::cout << "== " << f.string() << "\n" << summary.str() << "\n";
    Row r{0.0, row.str(), {}};
    std::stringstream ss(r.line);
    for (std::string cell; std::getline(ss, cell, ',');) r.cells.push_back(cell);
    r.ratio = std::stod(r.cells.at(0));
    rows.push_back(std::move(r));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) { return a.ratio < b.ratio; });

  // Diagnostic only: cross-entropy is expected to grow with the ratio.
  for (std::size_t col : {2u, 3u}) {
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const std::string& prev = rows[i - 1].cells.at(col);
      const std::string& cur = rows[i].cells.size() > col ? rows[i].cells[col] : std::string();
      if (prev.empty() || cur.empty()) continue;
      if (std::stod(cur) < std::stod(prev)) {
        std::cout << "note: " << (col == 2 ? "ce_pruned" : "ce_comp") << " decreases from ratio "
                  << rows[i - 1].cells[0] << " to " << rows[i].cells[0] << "\n";
      }
    }
  }

  std::ostringstream csv;
  csv << pk_report_csv_header() << "\n";
  for (const Row& r : rows) csv << r.line << "\n";
  if (csv_path.empty()) {
    std::cout << csv.str();
  } else {
    write_text(csv_path, csv.str());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prunekit: Newton-scored structural pruning with closed-form compensation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(pk_version()));

  std::string config_path, model_path, text_path, out_path, calib_path, scores_path, mask_path;
  std::string dense_path, pruned_path, comp_path, report_path, csv_path;
  std::vector<std::string> report_inputs;
  Overrides ov;

  auto* init = app.add_subcommand("init", "Create a seeded toy model");
  init->add_option("--config", config_path, "Pipeline config JSON");
  init->add_option("--out", out_path, "Output model (PTKM)")->required();
  init->add_option("--seed", ov.seed, "Model seed");

  auto* calibrate = app.add_subcommand("calibrate", "Capture calibration activations");
  calibrate->add_option("--config", config_path, "Pipeline config JSON");
  calibrate->add_option("--model", model_path, "Dense model (PTKM)")->required();
  calibrate->add_option("--text", text_path, "Calibration text")->required();
  calibrate->add_option("--out", out_path, "Output calibration set (PTKM)")->required();

  auto* score = app.add_subcommand("score", "Solve the per-layer numerical scores");
  score->add_option("--config", config_path, "Pipeline config JSON");
  score->add_option("--model", model_path, "Dense model (PTKM)")->required();
  score->add_option("--calib", calib_path, "Calibration set (PTKM)")->required();
  score->add_option("--out", out_path, "Output scores (JSON)")->required();
  add_overrides(score, ov);

  auto* mask = app.add_subcommand("mask", "Build the global head/channel mask");
  mask->add_option("--config", config_path, "Pipeline config JSON");
  mask->add_option("--scores", scores_path, "Scores (JSON)")->required();
  mask->add_option("--out", out_path, "Output mask (JSON)")->required();
  mask->add_option("--ratio", ov.ratio, "Global pruning ratio in [0, 1)");

  auto* prune = app.add_subcommand("prune", "Remove masked heads and channels (no compensation)");
  prune->add_option("--model", model_path, "Dense model (PTKM)")->required();
  prune->add_option("--mask", mask_path, "Mask (JSON)")->required();
  prune->add_option("--out", out_path, "Output model (PTKM)")->required();

  auto* compensate = app.add_subcommand("compensate", "Compensate row-pruned projections, then prune");
  compensate->add_option("--config", config_path, "Pipeline config JSON");
  compensate->add_option("--model", model_path, "Dense model (PTKM)")->required();
  compensate->add_option("--mask", mask_path, "Mask (JSON)")->required();
  compensate->add_option("--calib", calib_path, "Calibration set (PTKM)")->required();
  compensate->add_option("--out", out_path, "Output model (PTKM)")->required();
  compensate->add_option("--gamma-rel", ov.gamma_rel, "Dampening as a fraction of mean(diag(2X^TX))");

  auto* eval = app.add_subcommand("eval", "Compare pruned models against the dense model");
  eval->add_option("--config", config_path, "Pipeline config JSON");
  eval->add_option("--dense", dense_path, "Dense model (PTKM)")->required();
  eval->add_option("--pruned", pruned_path, "Pruned model (PTKM)")->required();
  eval->add_option("--compensated", comp_path, "Compensated model (PTKM)");
  eval->add_option("--calib", calib_path, "Calibration set (PTKM)")->required();
  eval->add_option("--text", text_path, "Calibration text (held-out slice is evaluated)")->required();
  eval->add_option("--out", out_path, "Output report (JSON)")->required();

  auto* pipeline = app.add_subcommand("pipeline", "Run calibrate/score/mask/prune/compensate/eval");
  pipeline->add_option("--config", config_path, "Pipeline config JSON");
  pipeline->add_option("--model", model_path, "Dense model (PTKM)")->required();
  pipeline->add_option("--text", text_path, "Calibration text")->required();
  pipeline->add_option("--report", report_path, "Output report (JSON)")->required();
  pipeline->add_option("--out", out_path, "Output model (PTKM)")->required();
  pipeline->add_flag("--no-compensate", ov.no_compensate, "Skip weight compensation");
  add_overrides(pipeline, ov);

  auto* report = app.add_subcommand("report", "Summarize reports and export a CSV sweep");
  report->add_option("inputs", report_inputs, "Report files or directories")->required();
  report->add_option("--csv", csv_path, "CSV output (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitBadInput;
  }

  try {
    if (*init) {
      Config cfg;
      load_config(cfg, config_path, ov);
      Model m;
      check(pk_model_init(cfg.get(), m.out()), "init");
      check(pk_model_save(m.get(), out_path.c_str()), "init");
    } else if (*calibrate) {
      Config cfg;
      load_config(cfg, config_path, ov);
      Model m;
      check(pk_model_load(model_path.c_str(), m.out()), "load model");
      Calibration c;
      check(pk_calibration_capture(m.get(), cfg.get(), text_path.c_str(), c.out()), "calibrate");
      check(pk_calibration_save(c.get(), out_path.c_str()), "calibrate");
    } else if (*score) {
      Config cfg;
      load_config(cfg, config_path, ov);
      Model m;
      check(pk_model_load(model_path.c_str(), m.out()), "load model");
      Calibration c;
      check(pk_calibration_load(calib_path.c_str(), c.out()), "load calibration");
      Scores s;
      check(pk_scores_compute(m.get(), c.get(), cfg.get(), s.out()), "score");
      check(pk_scores_save(s.get(), out_path.c_str()), "score");
    } else if (*mask) {
      Config cfg;
      load_config(cfg, config_path, ov);
      Scores s;
      check(pk_scores_load(scores_path.c_str(), s.out()), "load scores");
      Mask mk;
      const pk_status st = check(pk_mask_build(s.get(), cfg.get(), mk.out()), "mask");
      check(pk_mask_save(mk.get(), out_path.c_str()), "mask");
      return exit_code_for(st);
    } else if (*prune) {
      Model m, out;
      Mask mk;
      check(pk_model_load(model_path.c_str(), m.out()), "load model");
      check(pk_mask_load(mask_path.c_str(), mk.out()), "load mask");
      check(pk_model_prune(m.get(), mk.get(), out.out()), "prune");
      check(pk_model_save(out.get(), out_path.c_str()), "prune");
    } else if (*compensate) {
      Config cfg;
      load_config(cfg, config_path, ov);
      Model m, out;
      Mask mk;
      Calibration c;
      check(pk_model_load(model_path.c_str(), m.out()), "load model");
      check(pk_mask_load(mask_path.c_str(), mk.out()), "load mask");
      check(pk_calibration_load(calib_path.c_str(), c.out()), "load calibration");
      check(pk_model_compensate(m.get(), mk.get(), c.get(), cfg.get(), out.out()), "compensate");
      check(pk_model_save(out.get(), out_path.c_str()), "compensate");
    } else if (*eval) {
      Config cfg;
      load_config(cfg, config_path, ov);
      Model dense, pruned, comp;
      Calibration c;
      check(pk_model_load(dense_path.c_str(), dense.out()), "load dense model");
      check(pk_model_load(pruned_path.c_str(), pruned.out()), "load pruned model");
      if (!comp_path.empty()) check(pk_model_load(comp_path.c_str(), comp.out()), "load compensated model");
      check(pk_calibration_load(calib_path.c_str(), c.out()), "load calibration");
      OwnedString rep;
      check(pk_evaluate(cfg.get(), dense.get(), pruned.get(), comp.get(), c.get(), text_path.c_str(),
                        rep.out()),
            "eval");
      write_text(out_path, rep.str());
    } else if (*pipeline) {
      Config cfg;
      load_config(cfg, config_path, ov);
      Model dense, out;
      check(pk_model_load(model_path.c_str(), dense.out()), "load model");
      OwnedString rep;
      const pk_status st =
          check(pk_pipeline_run(cfg.get(), dense.get(), text_path.c_str(), rep.out(), out.out()), "pipeline");
      write_text(report_path, rep.str());
      check(pk_model_save(out.get(), out_path.c_str()), "pipeline");
      OwnedString summary;
      if (pk_report_summary(rep.ptr, summary.out()) == PK_OK) std::cout << summary.str();
      return exit_code_for(st);
    } else if (*report) {
      return run_report(report_inputs, csv_path);
    }
  } catch (const Exit& e) {
    return e.code;
  }
  return kExitOk;
}
