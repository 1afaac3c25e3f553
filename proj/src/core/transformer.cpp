#include "core/transformer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "core/parallel.hpp"
#include "core/rng.hpp"

namespace prunekit {

void ModelConfig::validate() const {
  if (vocab_size == 0 || n_layers == 0 || d_model == 0 || n_heads == 0 || d_inter == 0 ||
      max_seq == 0) {
    throw ConfigError("model config: all dimensions must be >= 1");
  }
  if (d_model % n_heads != 0) {
    throw ConfigError("model config: d_model " + std::to_string(d_model) +
                      " is not divisible by n_heads " + std::to_string(n_heads));
  }
}

std::size_t ModelBundle::parameter_count() const {
  std::size_t n = tok_embedding.size() + final_norm.size();
  for (const LayerWeights& l : layers) {
    n += l.wq.size() + l.wk.size() + l.wv.size() + l.wo.size();
    n += l.wup.size() + l.wgate.size() + l.wdown.size();
    n += l.attn_norm.size() + l.mlp_norm.size();
  }
  return n;
}

ModelBundle init_model(const ModelConfig& config) {
  config.validate();
  SplitMix64 rng(config.seed);
  auto draw = [&](std::size_t rows, std::size_t cols) {
    DenseMatrix m(rows, cols);
    for (double& v : m.data()) v = rng.next_gaussian(0.0, kInitStddev);
    return m;
  };
  const std::size_t d = config.d_model;
  ModelBundle model;
  model.config = config;
  model.tok_embedding = draw(config.vocab_size, d);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerWeights lw;
    lw.wdown = draw(config.d_inter, d);
    lw.wgate = draw(d, config.d_inter);
    lw.wk = draw(d, d);
    lw.wo = draw(d, d);
    lw.wq = draw(d, d);
    lw.wup = draw(d, config.d_inter);
    lw.wv = draw(d, d);
    lw.attn_norm.assign(d, 1.0);
    lw.mlp_norm.assign(d, 1.0);
    lw.kept_heads.resize(config.n_heads);
    std::iota(lw.kept_heads.begin(), lw.kept_heads.end(), std::size_t{0});
    lw.kept_channels.resize(config.d_inter);
    std::iota(lw.kept_channels.begin(), lw.kept_channels.end(), std::size_t{0});
    model.layers.push_back(std::move(lw));
  }
  model.final_norm.assign(d, 1.0);
  return model;
}

namespace {

DenseMatrix rms_norm(const DenseMatrix& x, std::span<const double> gain) {
  DenseMatrix out(x.rows(), x.cols());
  for (std::size_t t = 0; t < x.rows(); ++t) {
    auto xt = x.row(t);
    double ss = 0.0;
    for (double v : xt) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(xt.size()) + kRmsNormEps);
    auto ot = out.row(t);
    for (std::size_t j = 0; j < xt.size(); ++j) ot[j] = xt[j] * inv * gain[j];
  }
  return out;
}

void add_in_place(DenseMatrix& x, const DenseMatrix& delta) {
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] += delta.data()[i];
}

DenseMatrix causal_attention(const DenseMatrix& q, const DenseMatrix& k, const DenseMatrix& v,
                             const LayerWeights& lw, std::size_t head_dim,
                             const std::vector<std::uint8_t>* zero_heads, double* row_error) {
  const std::size_t n = q.rows();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  DenseMatrix out(n, q.cols());
  std::vector<double> p(n);
  for (std::size_t h = 0; h < lw.n_heads(); ++h) {
    const std::size_t off = h * head_dim;
    const bool zeroed = zero_heads && (*zero_heads)[lw.kept_heads[h]] != 0;
    for (std::size_t t = 0; t < n; ++t) {
      double mx = -INFINITY;
      for (std::size_t u = 0; u <= t; ++u) {
        double s = 0.0;
        for (std::size_t c = 0; c < head_dim; ++c) s += q(t, off + c) * k(u, off + c);
        p[u] = s * inv_sqrt;
        mx = std::max(mx, p[u]);
      }
      double denom = 0.0;
      for (std::size_t u = 0; u <= t; ++u) {
        p[u] = std::exp(p[u] - mx);
        denom += p[u];
      }
      double total = 0.0;
      for (std::size_t u = 0; u <= t; ++u) {
        p[u] /= denom;
        total += p[u];
      }
      if (row_error) *row_error = std::max(*row_error, std::abs(total - 1.0));
      if (zeroed) continue;
      for (std::size_t u = 0; u <= t; ++u) {
        const double w = p[u];
        for (std::size_t c = 0; c < head_dim; ++c) out(t, off + c) += w * v(u, off + c);
      }
    }
  }
  return out;
}

}  // namespace

DenseMatrix forward(const ModelBundle& model, std::span<const Token> tokens, ForwardProbe* probe) {
  const ModelConfig& cfg = model.config;
  if (tokens.empty()) throw InputError("forward: empty token sequence");
  if (tokens.size() > cfg.max_seq) {
    throw InputError("forward: sequence length " + std::to_string(tokens.size()) +
                     " exceeds max_seq " + std::to_string(cfg.max_seq));
  }
  const std::size_t d = cfg.d_model;
  DenseMatrix x(tokens.size(), d);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] >= cfg.vocab_size) {
      throw InputError("forward: token id " + std::to_string(tokens[t]) + " outside vocabulary");
    }
    auto src = model.tok_embedding.row(tokens[t]);
    std::copy(src.begin(), src.end(), x.row(t).begin());
  }

  const std::size_t head_dim = cfg.head_dim();
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const LayerWeights& lw = model.layers[l];
    const DenseMatrix h = rms_norm(x, lw.attn_norm);
    const DenseMatrix q = matmul(h, lw.wq);
    const DenseMatrix k = matmul(h, lw.wk);
    const DenseMatrix v = matmul(h, lw.wv);
    const std::vector<std::uint8_t>* zh =
        probe && probe->zero_heads ? &(*probe->zero_heads)[l] : nullptr;
    DenseMatrix attn_in = causal_attention(q, k, v, lw, head_dim, zh,
                                           probe ? &probe->max_softmax_row_error : nullptr);
    DenseMatrix attn_out = matmul(attn_in, lw.wo);
    add_in_place(x, attn_out);

    const DenseMatrix h2 = rms_norm(x, lw.mlp_norm);
    DenseMatrix up = matmul(h2, lw.wup);
    const DenseMatrix gate = matmul(h2, lw.wgate);
    const std::vector<std::uint8_t>* zc =
        probe && probe->zero_channels ? &(*probe->zero_channels)[l] : nullptr;
    for (std::size_t t = 0; t < up.rows(); ++t) {
      for (std::size_t c = 0; c < up.cols(); ++c) {
        double g = gate(t, c);
        if (cfg.silu_gate) g = g / (1.0 + std::exp(-g));
        up(t, c) *= g;
        if (zc && (*zc)[lw.kept_channels[c]] != 0) up(t, c) = 0.0;
      }
    }
    DenseMatrix mlp_out = matmul(up, lw.wdown);
    add_in_place(x, mlp_out);

    if (probe && probe->capture) {
      probe->attn_inputs.push_back(std::move(attn_in));
      probe->attn_outputs.push_back(std::move(attn_out));
      probe->mlp_inputs.push_back(std::move(up));
      probe->mlp_outputs.push_back(std::move(mlp_out));
    }
  }

  const DenseMatrix xf = rms_norm(x, model.final_norm);
  DenseMatrix logits(tokens.size(), cfg.vocab_size);
  for (std::size_t t = 0; t < xf.rows(); ++t) {
    auto xt = xf.row(t);
    for (std::size_t tok = 0; tok < cfg.vocab_size; ++tok) {
      auto e = model.tok_embedding.row(tok);
      double s = 0.0;
      for (std::size_t j = 0; j < d; ++j) s += xt[j] * e[j];
      logits(t, tok) = s;
    }
  }
  return logits;
}

CalibrationSet capture_activations(const ModelBundle& model,
                                   const std::vector<TokenSequence>& batches) {
  if (batches.empty()) throw DegenerateCalibrationError("calibration set is empty");
  std::vector<ForwardProbe> probes(batches.size());
  parallel_for(batches.size(), [&](std::size_t b) {
    probes[b].capture = true;
    forward(model, batches[b], &probes[b]);
  });

  const std::size_t layers = model.layers.size();
  std::size_t rows = 0;
  for (const TokenSequence& s : batches) rows += s.size();
  CalibrationSet set;
  set.samples = batches.size();
  for (std::size_t l = 0; l < layers; ++l) {
    DenseMatrix attn(rows, model.layers[l].wo.rows());
    DenseMatrix mlp(rows, model.layers[l].wdown.rows());
    std::size_t r = 0;
    for (const ForwardProbe& p : probes) {
      const DenseMatrix& a = p.attn_inputs[l];
      const DenseMatrix& m = p.mlp_inputs[l];
      std::copy(a.data().begin(), a.data().end(), attn.row(r).begin());
      std::copy(m.data().begin(), m.data().end(), mlp.row(r).begin());
      r += a.rows();
    }
    set.attn_proj_input.push_back(std::move(attn));
    set.mlp_down_input.push_back(std::move(mlp));
  }
  return set;
}

namespace {

DenseMatrix keep_columns(const DenseMatrix& m, const std::vector<std::size_t>& cols) {
  DenseMatrix out(m.rows(), cols.size());
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (std::size_t j = 0; j < cols.size(); ++j) out(r, j) = m(r, cols[j]);
  return out;
}

DenseMatrix keep_rows(const DenseMatrix& m, const std::vector<std::size_t>& rows) {
  DenseMatrix out(rows.size(), m.cols());
  for (std::size_t j = 0; j < rows.size(); ++j) {
    auto src = m.row(rows[j]);
    std::copy(src.begin(), src.end(), out.row(j).begin());
  }
  return out;
}

}  // namespace

ModelBundle apply_prune(const ModelBundle& model, const GlobalMask& mask) {
  if (mask.layers.size() != model.layers.size()) {
    throw ShapeError("apply_prune: mask has " + std::to_string(mask.layers.size()) +
                     " layers, model has " + std::to_string(model.layers.size()));
  }
  const std::size_t head_dim = model.config.head_dim();
  ModelBundle out;
  out.config = model.config;
  out.tok_embedding = model.tok_embedding;
  out.final_norm = model.final_norm;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const LayerWeights& src = model.layers[l];
    const LayerMask& lm = mask.layers[l];
    if (lm.head_keep.size() != src.n_heads() || lm.mlp_keep.size() != src.n_channels()) {
      throw ShapeError("apply_prune: mask shape does not match layer " + std::to_string(l));
    }
    std::vector<std::size_t> head_cols, channels;
    LayerWeights lw;
    for (std::size_t h = 0; h < src.n_heads(); ++h) {
      if (!lm.head_keep[h]) continue;
      lw.kept_heads.push_back(src.kept_heads[h]);
      for (std::size_t c = 0; c < head_dim; ++c) head_cols.push_back(h * head_dim + c);
    }
    for (std::size_t c = 0; c < src.n_channels(); ++c) {
      if (!lm.mlp_keep[c]) continue;
      lw.kept_channels.push_back(src.kept_channels[c]);
      channels.push_back(c);
    }
    lw.wq = keep_columns(src.wq, head_cols);
    lw.wk = keep_columns(src.wk, head_cols);
    lw.wv = keep_columns(src.wv, head_cols);
    lw.wo = keep_rows(src.wo, head_cols);
    lw.wup = keep_columns(src.wup, channels);
    lw.wgate = keep_columns(src.wgate, channels);
    lw.wdown = keep_rows(src.wdown, channels);
    lw.attn_norm = src.attn_norm;
    lw.mlp_norm = src.mlp_norm;
    out.layers.push_back(std::move(lw));
  }
  return out;
}

std::size_t params_per_head(const ModelConfig& config) {
  // D_h columns of each of W_q, W_k, W_v plus D_h rows of W_o.
  return 4 * config.head_dim() * config.d_model;
}

std::size_t params_per_channel(const ModelConfig& config) { return 3 * config.d_model; }

namespace {

DenseVector log_softmax_row(std::span<const double> logits) {
  double mx = -INFINITY;
  for (double v : logits) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : logits) s += std::exp(v - mx);
  const double lse = mx + std::log(s);
  DenseVector out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

}  // namespace

ModelComparison compare_models(const ModelBundle& reference, const ModelBundle& candidate,
                               const std::vector<TokenSequence>& eval_tokens) {
  if (reference.config.vocab_size != candidate.config.vocab_size) {
    throw ShapeError("compare_models: vocabularies differ");
  }
  struct Partial {
    double ce_ref = 0.0, ce_cand = 0.0, kl = 0.0, diff_sq = 0.0, ref_sq = 0.0;
    std::size_t predicted = 0, positions = 0;
  };
  std::vector<Partial> parts(eval_tokens.size());
  parallel_for(eval_tokens.size(), [&](std::size_t s) {
    const TokenSequence& seq = eval_tokens[s];
    const DenseMatrix lr = forward(reference, seq);
    const DenseMatrix lc = forward(candidate, seq);
    Partial& p = parts[s];
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const DenseVector a = log_softmax_row(lr.row(t));
      const DenseVector b = log_softmax_row(lc.row(t));
      double kl = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) kl += std::exp(a[i]) * (a[i] - b[i]);
      p.kl += kl;
      ++p.positions;
      if (t + 1 < seq.size()) {
        p.ce_ref -= a[seq[t + 1]];
        p.ce_cand -= b[seq[t + 1]];
        ++p.predicted;
      }
      for (std::size_t i = 0; i < a.size(); ++i) {
        const double diff = lr(t, i) - lc(t, i);
        p.diff_sq += diff * diff;
        p.ref_sq += lr(t, i) * lr(t, i);
      }
    }
  });
  Partial tot;
  for (const Partial& p : parts) {
    tot.ce_ref += p.ce_ref;
    tot.ce_cand += p.ce_cand;
    tot.kl += p.kl;
    tot.diff_sq += p.diff_sq;
    tot.ref_sq += p.ref_sq;
    tot.predicted += p.predicted;
    tot.positions += p.positions;
  }
  ModelComparison c;
  if (tot.predicted) {
    c.ce_reference = tot.ce_ref / static_cast<double>(tot.predicted);
    c.ce_candidate = tot.ce_cand / static_cast<double>(tot.predicted);
  }
  if (tot.positions) c.kl = tot.kl / static_cast<double>(tot.positions);
  c.logit_rel_error = tot.ref_sq > 0.0 ? std::sqrt(tot.diff_sq / tot.ref_sq) : 0.0;
  c.params_reference = reference.parameter_count();
  c.params_candidate = candidate.parameter_count();
  return c;
}

namespace {

double projection_error(const DenseMatrix& x, const DenseMatrix& w_dense,
                        const std::vector<std::size_t>& kept_rows, const DenseMatrix& w_kept) {
  const DenseMatrix full = matmul(x, w_dense);
  const DenseMatrix reduced = matmul(keep_columns(x, kept_rows), w_kept);
  double s = 0.0;
  for (std::size_t i = 0; i < full.size(); ++i) {
    const double d = full.data()[i] - reduced.data()[i];
    s += d * d;
  }
  return s;
}

}  // namespace

std::vector<LayerReconstruction> layer_reconstruction(const ModelBundle& dense,
                                                      const ModelBundle& pruned,
                                                      const CalibrationSet& calib) {
  if (dense.layers.size() != pruned.layers.size() ||
      calib.attn_proj_input.size() != dense.layers.size()) {
    throw ShapeError("layer_reconstruction: layer counts differ");
  }
  const std::size_t head_dim = dense.config.head_dim();
  std::vector<LayerReconstruction> out(dense.layers.size());
  parallel_for(out.size(), [&](std::size_t l) {
    const LayerWeights& dl = dense.layers[l];
    const LayerWeights& pl = pruned.layers[l];
    if (dl.n_heads() != dense.config.n_heads || dl.n_channels() != dense.config.d_inter) {
      throw InvalidArgumentError("layer_reconstruction: reference model must be dense");
    }
    std::vector<std::size_t> head_rows;
    for (std::size_t h : pl.kept_heads)
      for (std::size_t c = 0; c < head_dim; ++c) head_rows.push_back(h * head_dim + c);
    const DenseMatrix& xa = calib.attn_proj_input[l];
    const DenseMatrix& xm = calib.mlp_down_input[l];
    LayerReconstruction& r = out[l];
    r.attn_loss = projection_error(xa, dl.wo, head_rows, pl.wo);
    r.mlp_loss = projection_error(xm, dl.wdown, pl.kept_channels, pl.wdown);
    r.attn_mse = r.attn_loss / static_cast<double>(xa.rows() * dl.wo.cols());
    r.mlp_mse = r.mlp_loss / static_cast<double>(xm.rows() * dl.wdown.cols());
  });
  return out;
}

std::vector<TokenSequence> tokenize_bytes(std::string_view bytes, std::size_t seq_len,
                                          std::size_t max_sequences) {
  if (seq_len == 0) throw InvalidArgumentError("tokenize_bytes: seq_len must be >= 1");
  std::vector<TokenSequence> out;
  for (std::size_t off = 0; off < bytes.size() && out.size() < max_sequences; off += seq_len) {
    const std::size_t len = std::min(seq_len, bytes.size() - off);
    TokenSequence seq(len);
    for (std::size_t i = 0; i < len; ++i) seq[i] = static_cast<unsigned char>(bytes[off + i]);
    out.push_back(std::move(seq));
  }
  return out;
}

}  // namespace prunekit
