#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "core/global_mask.hpp"
#include "core/tensor.hpp"

namespace prunekit {

using Token = std::uint32_t;
using TokenSequence = std::vector<Token>;

struct ModelConfig {
  std::size_t vocab_size = 256;
  std::size_t n_layers = 4;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_inter = 128;
  std::size_t max_seq = 64;
  std::uint64_t seed = 0;
  bool silu_gate = false;  // SiLU on the gate path; off means H_up o H_gate

  std::size_t head_dim() const noexcept { return n_heads ? d_model / n_heads : 0; }
  void validate() const;  // throws ConfigError
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
  DenseMatrix wq, wk, wv;  // D x D_p
  DenseMatrix wo;          // D_p x D
  DenseMatrix wup, wgate;  // D x D_inter
  DenseMatrix wdown;       // D_inter x D
  DenseVector attn_norm;
  DenseVector mlp_norm;
  // Original head / channel index of every surviving head / channel.
  std::vector<std::size_t> kept_heads;
  std::vector<std::size_t> kept_channels;

  std::size_t n_heads() const noexcept { return kept_heads.size(); }
  std::size_t n_channels() const noexcept { return kept_channels.size(); }
};

struct ModelBundle {
  ModelConfig config;
  DenseMatrix tok_embedding;  // vocab x D; the output head is its transpose
  std::vector<LayerWeights> layers;
  DenseVector final_norm;

  std::size_t parameter_count() const;
};

// Activations multiplied into W_o and W_down, one row per token position.
struct CalibrationSet {
  std::vector<DenseMatrix> attn_proj_input;
  std::vector<DenseMatrix> mlp_down_input;
  std::size_t samples = 0;
};

inline constexpr double kInitStddev = 0.02;
inline constexpr double kRmsNormEps = 1e-6;

// Gaussian(0, 0.02) weights from a splitmix64 stream seeded with
// config.seed. Draw order: token embedding, then per layer the tensors
// wdown, wgate, wk, wo, wq, wup, wv (alphabetical), each row-major. Norm
// gains are 1 and draw nothing.
ModelBundle init_model(const ModelConfig& config);

// Optional instrumentation for forward(). Zeroing masks are indexed by the
// original head / channel id (1 = zero that contribution).
struct ForwardProbe {
  const std::vector<std::vector<std::uint8_t>>* zero_heads = nullptr;
  const std::vector<std::vector<std::uint8_t>>* zero_channels = nullptr;
  std::vector<DenseMatrix> attn_inputs;   // filled when capture is set
  std::vector<DenseMatrix> mlp_inputs;
  std::vector<DenseMatrix> attn_outputs;  // attn_inputs * W_o
  std::vector<DenseMatrix> mlp_outputs;   // mlp_inputs * W_down
  bool capture = false;
  double max_softmax_row_error = 0.0;
};

// Pre-norm decoder: x += Attn(RMSNorm(x)); x += MLP(RMSNorm(x)); causal
// attention; logits = RMSNorm(x) E^T. Returns len x vocab logits.
DenseMatrix forward(const ModelBundle& model, std::span<const Token> tokens,
                    ForwardProbe* probe = nullptr);

CalibrationSet capture_activations(const ModelBundle& model,
                                   const std::vector<TokenSequence>& batches);

// Structural removal: pruned heads lose their Q/K/V columns and W_o rows,
// pruned channels their up/gate columns and W_down row.
ModelBundle apply_prune(const ModelBundle& model, const GlobalMask& mask);

// Parameters removed with one head / one MLP channel.
std::size_t params_per_head(const ModelConfig& config);
std::size_t params_per_channel(const ModelConfig& config);

struct ModelComparison {
  double ce_reference = 0.0;  // mean next-byte cross-entropy, nats
  double ce_candidate = 0.0;
  double kl = 0.0;            // mean KL(softmax_ref || softmax_cand) over positions
  double logit_rel_error = 0.0;
  std::size_t params_reference = 0;
  std::size_t params_candidate = 0;
  double reduction() const noexcept {
    return params_reference ? 1.0 - static_cast<double>(params_candidate) /
                                        static_cast<double>(params_reference)
                            : 0.0;
  }
};

ModelComparison compare_models(const ModelBundle& reference, const ModelBundle& candidate,
                               const std::vector<TokenSequence>& eval_tokens);

struct LayerReconstruction {
  double attn_loss = 0.0;  // ||X W_o - X_kept W_o'||_F^2
  double mlp_loss = 0.0;   // ||X W_down - X_kept W_down'||_F^2
  double attn_mse = 0.0;
  double mlp_mse = 0.0;
};

// Per-layer output error of the row-pruned projections on the dense model's
// calibration activations.
std::vector<LayerReconstruction> layer_reconstruction(const ModelBundle& dense,
                                                      const ModelBundle& pruned,
                                                      const CalibrationSet& calib);

// Splits bytes into consecutive sequences of seq_len tokens (the last one may
// be shorter), stopping after max_sequences.
std::vector<TokenSequence> tokenize_bytes(std::string_view bytes, std::size_t seq_len,
                                          std::size_t max_sequences);

}  // namespace prunekit
