#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "core/tensor.hpp"

namespace prunekit {

// Per-layer channel scores. `attn` covers the H * D_h inputs of the attention
// output projection, `mlp` the D_inter inputs of the down projection.
struct LayerScores {
  DenseVector attn;
  DenseVector mlp;
};

struct ScoreBundle {
  std::size_t head_dim = 0;
  std::vector<LayerScores> layers;
};

enum class ItemKind : int { kAttentionHead = 0, kMlpChannel = 1 };

struct PooledItem {
  double score = 0.0;
  std::size_t layer = 0;
  ItemKind kind = ItemKind::kAttentionHead;
  std::size_t index = 0;
};

// Lexicographic (score, layer, kind, index).
bool pooled_before(const PooledItem& a, const PooledItem& b);

struct LayerMask {
  std::vector<std::uint8_t> head_keep;
  std::vector<std::uint8_t> mlp_keep;
};

struct GlobalMask {
  std::vector<LayerMask> layers;
  double eta = 0.0;  // -infinity when nothing is pruned
  std::size_t pruned_items = 0;
  std::size_t requested_items = 0;
  bool guard_triggered = false;  // a min-keep guard skipped at least one item
  bool feasible() const noexcept { return pruned_items == requested_items; }
};

struct MaskOptions {
  double rho = 0.0;
  std::size_t min_keep_heads = 1;
  std::size_t min_keep_channels = 1;
  bool standardize_scores = false;
};

// Block means over contiguous groups of head_dim channels.
DenseVector group_head_scores(std::span<const double> attn_scores, std::size_t head_dim);

// 4 D_h / 3: parameters removed per head over parameters removed per MLP
// channel, in units of the model width.
double scale_factor(std::size_t head_dim);

// floor(rho * total). Throws InvalidRatioError unless 0 <= rho < 1.
std::size_t requested_prune_count(double rho, std::size_t total);

struct ThresholdResult {
  double eta = 0.0;
  std::size_t prune_count = 0;
  std::vector<PooledItem> order;  // ascending by pooled_before
};

// Sorts the pooled scores and picks the score at rank floor(rho * n)
// (1-based). rho == 0 yields eta = -infinity.
ThresholdResult global_threshold(std::vector<PooledItem> pooled, double rho);

GlobalMask build_masks(const ScoreBundle& scores, const MaskOptions& opts);

std::string mask_to_json(const GlobalMask& mask);
GlobalMask mask_from_json(std::string_view text);

std::string scores_to_json(const ScoreBundle& scores);
ScoreBundle scores_from_json(std::string_view text);

}  // namespace prunekit
