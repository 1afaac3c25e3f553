#include "core/global_mask.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include "json.hpp"

namespace prunekit {

using nlohmann::json;

bool pooled_before(const PooledItem& a, const PooledItem& b) {
  return std::tuple(a.score, a.layer, static_cast<int>(a.kind), a.index) <
         std::tuple(b.score, b.layer, static_cast<int>(b.kind), b.index);
}

DenseVector group_head_scores(std::span<const double> attn_scores, std::size_t head_dim) {
  if (head_dim == 0 || attn_scores.size() % head_dim != 0) {
    throw ShapeError("group_head_scores: length " + std::to_string(attn_scores.size()) +
                     " is not divisible by head_dim " + std::to_string(head_dim));
  }
  const std::size_t heads = attn_scores.size() / head_dim;
  DenseVector out(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    double s = 0.0;
    for (std::size_t i = 0; i < head_dim; ++i) s += attn_scores[h * head_dim + i];
    out[h] = s / static_cast<double>(head_dim);
  }
  return out;
}

double scale_factor(std::size_t head_dim) {
  if (head_dim == 0) throw InvalidArgumentError("scale_factor: head_dim must be >= 1");
  return 4.0 * static_cast<double>(head_dim) / 3.0;
}

std::size_t requested_prune_count(double rho, std::size_t total) {
  if (!(rho >= 0.0 && rho < 1.0)) {
    throw InvalidRatioError("pruning ratio must lie in [0, 1), got " + std::to_string(rho));
  }
  return static_cast<std::size_t>(std::floor(rho * static_cast<double>(total)));
}

ThresholdResult global_threshold(std::vector<PooledItem> pooled, double rho) {
  if (pooled.empty()) throw InvalidArgumentError("global_threshold: no scores to pool");
  ThresholdResult res;
  res.prune_count = requested_prune_count(rho, pooled.size());
  std::sort(pooled.begin(), pooled.end(), pooled_before);
  res.eta = res.prune_count == 0 ? -std::numeric_limits<double>::infinity()
                                 : pooled[res.prune_count - 1].score;
  res.order = std::move(pooled);
  return res;
}

namespace {

void standardize(DenseVector& v) {
  if (v.empty()) return;
  double mean = 0.0;
  for (double e : v) mean += e;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double e : v) var += (e - mean) * (e - mean);
  var /= static_cast<double>(v.size());
  const double sd = std::sqrt(var);
  for (double& e : v) e = sd > 0.0 ? (e - mean) / sd : e - mean;
}

}  // namespace

GlobalMask build_masks(const ScoreBundle& scores, const MaskOptions& opts) {
  if (scores.layers.empty()) throw InvalidArgumentError("build_masks: score bundle has no layers");
  const double alpha = scale_factor(scores.head_dim);

  GlobalMask mask;
  std::vector<PooledItem> pooled;
  std::vector<std::size_t> heads_left, channels_left;
  for (std::size_t l = 0; l < scores.layers.size(); ++l) {
    DenseVector attn = scores.layers[l].attn;
    DenseVector mlp = scores.layers[l].mlp;
    if (!all_finite(attn) || !all_finite(mlp)) {
      throw InvalidArgumentError("build_masks: non-finite score in layer " + std::to_string(l));
    }
    if (opts.standardize_scores) {
      standardize(attn);
      standardize(mlp);
    }
    const DenseVector heads = group_head_scores(attn, scores.head_dim);
    for (std::size_t h = 0; h < heads.size(); ++h)
      pooled.push_back({alpha * heads[h], l, ItemKind::kAttentionHead, h});
    for (std::size_t c = 0; c < mlp.size(); ++c)
      pooled.push_back({mlp[c], l, ItemKind::kMlpChannel, c});
    mask.layers.push_back({std::vector<std::uint8_t>(heads.size(), 1),
                           std::vector<std::uint8_t>(mlp.size(), 1)});
    heads_left.push_back(heads.size());
    channels_left.push_back(mlp.size());
  }

  ThresholdResult th = global_threshold(std::move(pooled), opts.rho);
  mask.requested_items = th.prune_count;
  mask.eta = -std::numeric_limits<double>::infinity();

  // Walk up the sorted pool. An item whose removal would break its layer's
  // min-keep guard is skipped; the walk continues so the count stays exact
  // whenever that is feasible.
  for (const PooledItem& item : th.order) {
    if (mask.pruned_items == th.prune_count) break;
    if (item.kind == ItemKind::kAttentionHead) {
      if (heads_left[item.layer] <= opts.min_keep_heads) {
        mask.guard_triggered = true;
        continue;
      }
      --heads_left[item.layer];
      mask.layers[item.layer].head_keep[item.index] = 0;
    } else {
      if (channels_left[item.layer] <= opts.min_keep_channels) {
        mask.guard_triggered = true;
        continue;
      }
      --channels_left[item.layer];
      mask.layers[item.layer].mlp_keep[item.index] = 0;
    }
    ++mask.pruned_items;
    mask.eta = item.score;
  }
  return mask;
}

std::string mask_to_json(const GlobalMask& mask) {
  json doc;
  doc["layers"] = json::array();
  for (const LayerMask& l : mask.layers) {
    doc["layers"].push_back({{"head_keep", l.head_keep}, {"mlp_keep", l.mlp_keep}});
  }
  doc["eta"] = std::isfinite(mask.eta) ? json(mask.eta) : json(nullptr);
  doc["pruned_items"] = mask.pruned_items;
  doc["requested_items"] = mask.requested_items;
  doc["guard_triggered"] = mask.guard_triggered;
  return doc.dump(2);
}

namespace {

std::vector<std::uint8_t> read_bits(const json& arr, const char* what) {
  std::vector<std::uint8_t> out;
  for (const json& v : arr) {
    const int b = v.get<int>();
    if (b != 0 && b != 1) throw FormatError(std::string("mask: ") + what + " entries must be 0/1");
    out.push_back(static_cast<std::uint8_t>(b));
  }
  return out;
}

}  // namespace

GlobalMask mask_from_json(std::string_view text) {
  try {
    const json doc = json::parse(text);
    GlobalMask mask;
    for (const json& l : doc.at("layers")) {
      mask.layers.push_back({read_bits(l.at("head_keep"), "head_keep"),
                             read_bits(l.at("mlp_keep"), "mlp_keep")});
    }
    const json& eta = doc.at("eta");
    mask.eta = eta.is_null() ? -std::numeric_limits<double>::infinity() : eta.get<double>();
    mask.pruned_items = doc.at("pruned_items").get<std::size_t>();
    mask.requested_items = doc.at("requested_items").get<std::size_t>();
    mask.guard_triggered = doc.value("guard_triggered", false);
    std::size_t zeros = 0;
    for (const LayerMask& l : mask.layers) {
      zeros += static_cast<std::size_t>(std::count(l.head_keep.begin(), l.head_keep.end(), 0));
      zeros += static_cast<std::size_t>(std::count(l.mlp_keep.begin(), l.mlp_keep.end(), 0));
    }
    if (zeros != mask.pruned_items) {
      throw FormatError("mask: pruned_items does not match the number of zero entries");
    }
    return mask;
  } catch (const json::exception& e) {
    throw FormatError(std::string("mask: ") + e.what());
  }
}

std::string scores_to_json(const ScoreBundle& scores) {
  json doc;
  doc["head_dim"] = scores.head_dim;
  doc["layers"] = json::array();
  for (const LayerScores& l : scores.layers) doc["layers"].push_back({{"attn", l.attn}, {"mlp", l.mlp}});
  return doc.dump(2);
}

ScoreBundle scores_from_json(std::string_view text) {
  try {
    const json doc = json::parse(text);
    ScoreBundle s;
    s.head_dim = doc.at("head_dim").get<std::size_t>();
    for (const json& l : doc.at("layers")) {
      s.layers.push_back({l.at("attn").get<DenseVector>(), l.at("mlp").get<DenseVector>()});
    }
    return s;
  } catch (const json::exception& e) {
    throw FormatError(std::string("scores: ") + e.what());
  }
}

}  // namespace prunekit
