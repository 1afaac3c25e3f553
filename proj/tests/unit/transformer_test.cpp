#include <gtest/gtest.h>

#include <cmath>

#include "core/ptkm.hpp"
#include "core/rng.hpp"
#include "core/transformer.hpp"
#include "support/random.hpp"

namespace prunekit {
namespace {

ModelConfig small_config(std::uint64_t seed = 5) {
  ModelConfig c;
  c.vocab_size = 256;
  c.n_layers = 2;
  c.d_model = 32;
  c.n_heads = 4;
  c.d_inter = 64;
  c.max_seq = 32;
  c.seed = seed;
  return c;
}

TokenSequence bytes_of(std::string_view s) { return TokenSequence(s.begin(), s.end()); }

GlobalMask all_keep(const ModelBundle& m) {
  GlobalMask mask;
  for (const LayerWeights& lw : m.layers)
    mask.layers.push_back({std::vector<std::uint8_t>(lw.n_heads(), 1),
                           std::vector<std::uint8_t>(lw.n_channels(), 1)});
  return mask;
}

TEST(SplitMix64, KnownFirstOutput) {
  SplitMix64 rng(0);
  EXPECT_EQ(rng.next_u64(), 0xE220A8397B1DCDAFull);
}

TEST(SplitMix64, Seed42Goldens) {
  SplitMix64 rng(42);
  EXPECT_EQ(rng.next_u64(), 0xbdd732262feb6e95ull);
  EXPECT_EQ(rng.next_u64(), 0x28efe333b266f103ull);
  SplitMix64 g(42);
  const double want[4] = {0.41471975043153003, 0.652681222151943, -0.8918862136277573,
                          1.3268335628141055};
  for (double w : want) EXPECT_DOUBLE_EQ(g.next_gaussian(), w);
}

TEST(InitModel, EmbeddingGoldensForSeed42) {
  ModelConfig c;
  c.seed = 42;
  const ModelBundle m = init_model(c);
  EXPECT_DOUBLE_EQ(m.tok_embedding(0, 0), 0.008294395008630601);
  EXPECT_DOUBLE_EQ(m.tok_embedding(0, 1), 0.01305362444303886);
  EXPECT_DOUBLE_EQ(m.tok_embedding(0, 2), -0.017837724272555148);
  EXPECT_DOUBLE_EQ(m.tok_embedding(0, 3), 0.02653667125628211);
}

TEST(InitModel, SameSeedByteIdenticalFiles) {
  EXPECT_EQ(encode_model(init_model(small_config(3))), encode_model(init_model(small_config(3))));
}

TEST(InitModel, DifferentSeedsDiffer) {
  EXPECT_NE(init_model(small_config(3)).tok_embedding, init_model(small_config(4)).tok_embedding);
}

TEST(InitModel, BadConfigRejected) {
  ModelConfig c = small_config();
  c.n_heads = 5;
  EXPECT_THROW(init_model(c), ConfigError);
  c = small_config();
  c.d_inter = 0;
  EXPECT_THROW(init_model(c), ConfigError);
}

TEST(Forward, SingleTokenShapeAndFinite) {
  const ModelBundle m = init_model(small_config());
  const TokenSequence t{65};
  const DenseMatrix logits = forward(m, t);
  EXPECT_EQ(logits.rows(), 1u);
  EXPECT_EQ(logits.cols(), 256u);
  EXPECT_TRUE(all_finite(logits.data()));
}

TEST(Forward, CausalPrefixRowsIdentical) {
  const ModelBundle m = init_model(small_config());
  const DenseMatrix a = forward(m, bytes_of("the quick brown fox"));
  const DenseMatrix b = forward(m, bytes_of("the quick red cat!!"));
  const std::size_t shared = 10;  // "the quick "
  for (std::size_t t = 0; t < shared; ++t)
    for (std::size_t j = 0; j < a.cols(); ++j) ASSERT_EQ(a(t, j), b(t, j)) << t;
  bool differs = false;
  for (std::size_t j = 0; j < a.cols(); ++j) differs |= a(shared, j) != b(shared, j);
  EXPECT_TRUE(differs);
}

TEST(Forward, SoftmaxRowsSumToOne) {
  const ModelBundle m = init_model(small_config());
  ForwardProbe probe;
  forward(m, bytes_of("softmax normalization check"), &probe);
  EXPECT_LE(probe.max_softmax_row_error, 1e-12);
}

TEST(Forward, RejectsBadInput) {
  const ModelBundle m = init_model(small_config());
  EXPECT_THROW(forward(m, TokenSequence{}), InputError);
  EXPECT_THROW(forward(m, TokenSequence(33, 1)), InputError);
  ModelConfig c = small_config();
  c.vocab_size = 16;
  EXPECT_THROW(forward(init_model(c), TokenSequence{16}), InputError);
}

TEST(Capture, RowsPerToken) {
  const ModelBundle m = init_model(small_config());
  const CalibrationSet cs = capture_activations(m, {bytes_of("abcd")});
  ASSERT_EQ(cs.attn_proj_input.size(), 2u);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(cs.attn_proj_input[l].rows(), 4u);
    EXPECT_EQ(cs.attn_proj_input[l].cols(), 32u);
    EXPECT_EQ(cs.mlp_down_input[l].rows(), 4u);
    EXPECT_EQ(cs.mlp_down_input[l].cols(), 64u);
  }
}

TEST(Capture, ManySamplesStackRows) {
  const ModelBundle m = init_model(small_config());
  std::vector<TokenSequence> batches(128, TokenSequence(32, 'a'));
  for (std::size_t b = 0; b < batches.size(); ++b) batches[b][b % 32] = static_cast<Token>('b' + b % 20);
  const CalibrationSet cs = capture_activations(m, batches);
  EXPECT_EQ(cs.samples, 128u);
  EXPECT_EQ(cs.attn_proj_input[1].rows(), 4096u);
  EXPECT_EQ(cs.mlp_down_input[0].rows(), 4096u);
}

TEST(Capture, ReplayReproducesLayerOutputs) {
  const ModelBundle m = init_model(small_config());
  ForwardProbe probe;
  probe.capture = true;
  forward(m, bytes_of("replay the projection"), &probe);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_LE(testing::max_abs_diff(matmul(probe.attn_inputs[l], m.layers[l].wo), probe.attn_outputs[l]),
              1e-12);
    EXPECT_LE(testing::max_abs_diff(matmul(probe.mlp_inputs[l], m.layers[l].wdown), probe.mlp_outputs[l]),
              1e-12);
  }
}

TEST(Capture, EmptyIsDegenerate) {
  EXPECT_THROW(capture_activations(init_model(small_config()), {}), DegenerateCalibrationError);
}

TEST(ApplyPrune, AllKeepIsBitwiseIdentical) {
  const ModelBundle m = init_model(small_config());
  const ModelBundle p = apply_prune(m, all_keep(m));
  const TokenSequence t = bytes_of("bitwise");
  EXPECT_EQ(forward(m, t), forward(p, t));
  EXPECT_EQ(encode_model(m), encode_model(p));
}

TEST(ApplyPrune, HeadZeroInjection) {
  const ModelBundle m = init_model(small_config());
  for (std::size_t h = 0; h < 4; ++h) {
    GlobalMask mask = all_keep(m);
    mask.layers[1].head_keep[h] = 0;
    std::vector<std::vector<std::uint8_t>> zero_heads(2, std::vector<std::uint8_t>(4, 0));
    zero_heads[1][h] = 1;
    ForwardProbe probe;
    probe.zero_heads = &zero_heads;
    const TokenSequence t = bytes_of("zero injection of one head");
    const DenseMatrix want = forward(m, t, &probe);
    EXPECT_LE(testing::max_abs_diff(forward(apply_prune(m, mask), t), want), 1e-10);
  }
}

TEST(ApplyPrune, ChannelZeroInjection) {
  const ModelBundle m = init_model(small_config());
  GlobalMask mask = all_keep(m);
  std::vector<std::vector<std::uint8_t>> zero_channels(2, std::vector<std::uint8_t>(64, 0));
  for (std::size_t c : {0u, 17u, 63u}) {
    mask.layers[0].mlp_keep[c] = 0;
    zero_channels[0][c] = 1;
  }
  ForwardProbe probe;
  probe.zero_channels = &zero_channels;
  const TokenSequence t = bytes_of("zero injection of channels");
  EXPECT_LE(testing::max_abs_diff(forward(apply_prune(m, mask), t), forward(m, t, &probe)), 1e-10);
}

TEST(ApplyPrune, LineageComposes) {
  const ModelBundle m = init_model(small_config());
  GlobalMask first = all_keep(m);
  first.layers[0].head_keep[1] = 0;
  first.layers[0].mlp_keep[5] = 0;
  const ModelBundle once = apply_prune(m, first);
  GlobalMask second = all_keep(once);
  second.layers[0].head_keep[1] = 0;  // original head 2
  second.layers[0].mlp_keep[5] = 0;   // original channel 6
  const ModelBundle twice = apply_prune(once, second);
  EXPECT_EQ(twice.layers[0].kept_heads, (std::vector<std::size_t>{0, 3}));
  EXPECT_EQ(twice.layers[0].kept_channels.size(), 62u);
  EXPECT_EQ(twice.layers[0].kept_channels[5], 7u);

  // Zero injection by original id still matches after two rounds.
  std::vector<std::vector<std::uint8_t>> zh(2, std::vector<std::uint8_t>(4, 0));
  std::vector<std::vector<std::uint8_t>> zc(2, std::vector<std::uint8_t>(64, 0));
  zh[0][1] = zh[0][2] = 1;
  zc[0][5] = zc[0][6] = 1;
  ForwardProbe probe;
  probe.zero_heads = &zh;
  probe.zero_channels = &zc;
  const TokenSequence t = bytes_of("lineage");
  EXPECT_LE(testing::max_abs_diff(forward(twice, t), forward(m, t, &probe)), 1e-10);
}

TEST(ApplyPrune, ShapeMismatchRejected) {
  const ModelBundle m = init_model(small_config());
  GlobalMask mask = all_keep(m);
  mask.layers[0].head_keep.pop_back();
  EXPECT_THROW(apply_prune(m, mask), ShapeError);
  mask.layers.pop_back();
  EXPECT_THROW(apply_prune(m, mask), ShapeError);
}

TEST(ParameterCount, PerItemReductions) {
  const ModelBundle m = init_model(small_config());
  const ModelConfig& c = m.config;
  GlobalMask head = all_keep(m);
  head.layers[0].head_keep[2] = 0;
  EXPECT_EQ(m.parameter_count() - apply_prune(m, head).parameter_count(), 4 * c.head_dim() * c.d_model);
  GlobalMask chan = all_keep(m);
  chan.layers[1].mlp_keep[9] = 0;
  EXPECT_EQ(m.parameter_count() - apply_prune(m, chan).parameter_count(), 3 * c.d_model);
  EXPECT_EQ(params_per_head(c), 4 * c.head_dim() * c.d_model);
  EXPECT_EQ(params_per_channel(c), 3 * c.d_model);
}

TEST(CompareModels, IdenticalModels) {
  const ModelBundle m = init_model(small_config());
  const ModelComparison cmp = compare_models(m, m, {bytes_of("same model twice")});
  EXPECT_EQ(cmp.kl, 0.0);
  EXPECT_EQ(cmp.logit_rel_error, 0.0);
  EXPECT_EQ(cmp.reduction(), 0.0);
  EXPECT_EQ(cmp.ce_reference, cmp.ce_candidate);
  EXPECT_GT(cmp.ce_reference, 0.0);
}

TEST(CompareModels, PrunedModelHasPositiveKl) {
  const ModelBundle m = init_model(small_config());
  GlobalMask mask = all_keep(m);
  mask.layers[0].head_keep[0] = 0;
  const ModelComparison cmp = compare_models(m, apply_prune(m, mask), {bytes_of("pruned differs")});
  EXPECT_GT(cmp.kl, 0.0);
  EXPECT_GT(cmp.reduction(), 0.0);
}

TEST(LayerReconstruction, ZeroForUnprunedModel) {
  const ModelBundle m = init_model(small_config());
  const CalibrationSet cs = capture_activations(m, {bytes_of("reconstruction")});
  for (const LayerReconstruction& r : layer_reconstruction(m, m, cs)) {
    EXPECT_EQ(r.attn_loss, 0.0);
    EXPECT_EQ(r.mlp_loss, 0.0);
  }
}

TEST(TokenizeBytes, SplitsAndCaps) {
  const auto seqs = tokenize_bytes("abcdefghij", 4, 10);
  ASSERT_EQ(seqs.size(), 3u);
  EXPECT_EQ(seqs[2], (TokenSequence{'i', 'j'}));
  EXPECT_EQ(tokenize_bytes("abcdefghij", 4, 2).size(), 2u);
  EXPECT_TRUE(tokenize_bytes("", 4, 2).empty());
}

TEST(Ptkm, ModelRoundTripIsExact) {
  ModelConfig c = small_config();
  c.silu_gate = true;
  const ModelBundle m = init_model(c);
  GlobalMask mask = all_keep(m);
  mask.layers[1].head_keep[3] = 0;
  mask.layers[0].mlp_keep[2] = 0;
  const ModelBundle p = apply_prune(m, mask);
  const std::vector<std::uint8_t> bytes = encode_model(p);
  const ModelBundle back = decode_model(bytes);
  EXPECT_EQ(back.config, p.config);
  EXPECT_EQ(back.layers[1].kept_heads, p.layers[1].kept_heads);
  EXPECT_EQ(back.layers[0].kept_channels, p.layers[0].kept_channels);
  EXPECT_EQ(back.layers[1].wq, p.layers[1].wq);
  EXPECT_EQ(encode_model(back), bytes);
}

TEST(Ptkm, RejectsTampering) {
  const std::vector<std::uint8_t> good = encode_model(init_model(small_config()));
  std::vector<std::uint8_t> bad = good;
  bad[0] = 'X';
  EXPECT_THROW(decode_model(bad), FormatError);
  bad = good;
  bad[4] = 2;  // version
  EXPECT_THROW(decode_model(bad), FormatError);
  bad = good;
  bad.pop_back();
  EXPECT_THROW(decode_model(bad), FormatError);
  bad = good;
  bad.push_back(0);
  EXPECT_THROW(decode_model(bad), FormatError);
  bad = good;
  // Overwrite the last payload value with a NaN bit pattern.
  for (std::size_t i = 0; i < 8; ++i) bad[bad.size() - 8 + i] = i == 7 ? 0x7f : (i == 6 ? 0xf8 : 0);
  EXPECT_THROW(decode_model(bad), FormatError);
  EXPECT_THROW(decode_model({}), FormatError);
}

TEST(Ptkm, CalibrationRoundTrip) {
  const ModelBundle m = init_model(small_config());
  const CalibrationSet cs = capture_activations(m, {bytes_of("calib one"), bytes_of("calib two")});
  const CalibrationSet back = decode_calibration(encode_calibration(cs));
  EXPECT_EQ(back.samples, cs.samples);
  EXPECT_EQ(back.attn_proj_input, cs.attn_proj_input);
  EXPECT_EQ(back.mlp_down_input, cs.mlp_down_input);
  EXPECT_THROW(decode_model(encode_calibration(cs)), FormatError);
}

TEST(Ptkm, ConfigJsonRoundTrip) {
  ModelConfig c = small_config(99);
  c.silu_gate = true;
  EXPECT_EQ(model_config_from_json(model_config_to_json(c)), c);
}

}  // namespace
}  // namespace prunekit
