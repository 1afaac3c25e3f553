#include "core/ptkm.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace prunekit {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'P', 'T', 'K', 'M'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(const std::vector<std::uint8_t>& in, std::size_t off, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(in[off + i]) << (8 * i);
  return v;
}

json config_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"n_layers", c.n_layers}, {"d_model", c.d_model},
          {"n_heads", c.n_heads},       {"d_inter", c.d_inter},   {"max_seq", c.max_seq},
          {"seed", c.seed},             {"silu_gate", c.silu_gate}};
}

ModelConfig config_from(const json& j) {
  ModelConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_inter = j.at("d_inter").get<std::size_t>();
  c.max_seq = j.at("max_seq").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.silu_gate = j.at("silu_gate").get<bool>();
  c.validate();
  return c;
}

const DenseMatrix& take(const PtkmDocument& doc, std::size_t& cursor, const std::string& name) {
  if (cursor >= doc.tensors.size() || doc.tensors[cursor].name != name) {
    throw FormatError("PTKM: expected tensor '" + name + "' at manifest position " +
                      std::to_string(cursor));
  }
  return doc.tensors[cursor++].value;
}

DenseVector as_vector(const DenseMatrix& m) {
  if (m.rows() != 1) throw FormatError("PTKM: gain vector must be stored as 1 x n");
  return {m.data().begin(), m.data().end()};
}

DenseMatrix row_matrix(const DenseVector& v) { return DenseMatrix(1, v.size(), v); }

void expect_shape(const DenseMatrix& m, std::size_t rows, std::size_t cols, const std::string& what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw FormatError("PTKM: tensor " + what + " has shape " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
                      std::to_string(cols));
  }
}

}  // namespace

std::vector<std::uint8_t> encode_ptkm(const std::string& meta_json,
                                      const std::vector<NamedTensor>& tensors) {
  json header = json::parse(meta_json);
  if (!header.is_object()) throw InvalidArgumentError("PTKM: header metadata must be an object");
  json manifest = json::array();
  for (const NamedTensor& t : tensors) {
    if (!all_finite(t.value.data())) throw InvalidArgumentError("PTKM: tensor " + t.name + " is not finite");
    manifest.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
  }
  header["tensors"] = std::move(manifest);
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kPtkmVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const NamedTensor& t : tensors) {
    for (double v : t.value.data()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

PtkmDocument decode_ptkm(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError("PTKM: bad magic bytes");
  }
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kPtkmVersion) {
    throw FormatError("PTKM: unsupported version " + std::to_string(version));
  }
  const std::uint64_t header_len = get_le(bytes, 8, 8);
  if (header_len > bytes.size() - 16) throw FormatError("PTKM: truncated header");
  PtkmDocument doc;
  doc.header_json.assign(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  std::size_t off = 16 + header_len;
  try {
    const json header = json::parse(doc.header_json);
    for (const json& entry : header.at("tensors")) {
      const auto rows = entry.at("rows").get<std::size_t>();
      const auto cols = entry.at("cols").get<std::size_t>();
      const std::size_t count = rows * cols;
      if (count > (bytes.size() - off) / 8) throw FormatError("PTKM: truncated tensor payload");
      std::vector<double> data(count);
      for (std::size_t i = 0; i < count; ++i, off += 8) {
        data[i] = std::bit_cast<double>(get_le(bytes, off, 8));
      }
      if (!all_finite(data)) throw FormatError("PTKM: non-finite value in " + entry.at("name").get<std::string>());
      doc.tensors.push_back({entry.at("name").get<std::string>(), DenseMatrix(rows, cols, std::move(data))});
    }
  } catch (const json::exception& e) {
    throw FormatError(std::string("PTKM: malformed header: ") + e.what());
  }
  if (off != bytes.size()) throw FormatError("PTKM: trailing bytes after last tensor");
  return doc;
}

std::vector<std::uint8_t> encode_model(const ModelBundle& model) {
  json meta;
  meta["format"] = "prunekit-model";
  meta["config"] = config_json(model.config);
  meta["layers"] = json::array();
  std::vector<NamedTensor> tensors;
  tensors.push_back({"tok_embedding", model.tok_embedding});
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const LayerWeights& lw = model.layers[l];
    meta["layers"].push_back({{"kept_heads", lw.kept_heads}, {"kept_channels", lw.kept_channels}});
    const std::string p = "layers." + std::to_string(l) + ".";
    tensors.push_back({p + "attn_norm", row_matrix(lw.attn_norm)});
    tensors.push_back({p + "mlp_norm", row_matrix(lw.mlp_norm)});
    tensors.push_back({p + "wdown", lw.wdown});
    tensors.push_back({p + "wgate", lw.wgate});
    tensors.push_back({p + "wk", lw.wk});
    tensors.push_back({p + "wo", lw.wo});
    tensors.push_back({p + "wq", lw.wq});
    tensors.push_back({p + "wup", lw.wup});
    tensors.push_back({p + "wv", lw.wv});
  }
  tensors.push_back({"final_norm", row_matrix(model.final_norm)});
  return encode_ptkm(meta.dump(), tensors);
}

ModelBundle decode_model(const std::vector<std::uint8_t>& bytes) {
  const PtkmDocument doc = decode_ptkm(bytes);
  try {
    const json header = json::parse(doc.header_json);
    if (header.value("format", "") != "prunekit-model") throw FormatError("PTKM: not a model file");
    ModelBundle model;
    model.config = config_from(header.at("config"));
    const ModelConfig& c = model.config;
    const json& layers = header.at("layers");
    if (layers.size() != c.n_layers) throw FormatError("PTKM: layer count differs from config");
    const std::size_t d = c.d_model;
    const std::size_t hd = c.head_dim();
    std::size_t cur = 0;
    model.tok_embedding = take(doc, cur, "tok_embedding");
    expect_shape(model.tok_embedding, c.vocab_size, d, "tok_embedding");
    for (std::size_t l = 0; l < c.n_layers; ++l) {
      LayerWeights lw;
      lw.kept_heads = layers[l].at("kept_heads").get<std::vector<std::size_t>>();
      lw.kept_channels = layers[l].at("kept_channels").get<std::vector<std::size_t>>();
      for (std::size_t h : lw.kept_heads)
        if (h >= c.n_heads) throw FormatError("PTKM: kept head index out of range");
      for (std::size_t ch : lw.kept_channels)
        if (ch >= c.d_inter) throw FormatError("PTKM: kept channel index out of range");
      const std::size_t dp = lw.kept_heads.size() * hd;
      const std::size_t di = lw.kept_channels.size();
      const std::string p = "layers." + std::to_string(l) + ".";
      lw.attn_norm = as_vector(take(doc, cur, p + "attn_norm"));
      lw.mlp_norm = as_vector(take(doc, cur, p + "mlp_norm"));
      lw.wdown = take(doc, cur, p + "wdown");
      lw.wgate = take(doc, cur, p + "wgate");
      lw.wk = take(doc, cur, p + "wk");
      lw.wo = take(doc, cur, p + "wo");
      lw.wq = take(doc, cur, p + "wq");
      lw.wup = take(doc, cur, p + "wup");
      lw.wv = take(doc, cur, p + "wv");
      if (lw.attn_norm.size() != d || lw.mlp_norm.size() != d) throw FormatError("PTKM: bad norm length");
      expect_shape(lw.wq, d, dp, p + "wq");
      expect_shape(lw.wk, d, dp, p + "wk");
      expect_shape(lw.wv, d, dp, p + "wv");
      expect_shape(lw.wo, dp, d, p + "wo");
      expect_shape(lw.wup, d, di, p + "wup");
      expect_shape(lw.wgate, d, di, p + "wgate");
      expect_shape(lw.wdown, di, d, p + "wdown");
      model.layers.push_back(std::move(lw));
    }
    model.final_norm = as_vector(take(doc, cur, "final_norm"));
    if (model.final_norm.size() != d) throw FormatError("PTKM: bad final_norm length");
    if (cur != doc.tensors.size()) throw FormatError("PTKM: unexpected extra tensors");
    return model;
  } catch (const json::exception& e) {
    throw FormatError(std::string("PTKM: malformed model header: ") + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(std::string("PTKM: invalid model config: ") + e.what());
  }
}

std::vector<std::uint8_t> encode_calibration(const CalibrationSet& calib) {
  json meta;
  meta["format"] = "prunekit-calibration";
  meta["samples"] = calib.samples;
  meta["n_layers"] = calib.attn_proj_input.size();
  std::vector<NamedTensor> tensors;
  for (std::size_t l = 0; l < calib.attn_proj_input.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    tensors.push_back({p + "attn_proj_input", calib.attn_proj_input[l]});
    tensors.push_back({p + "mlp_down_input", calib.mlp_down_input[l]});
  }
  return encode_ptkm(meta.dump(), tensors);
}

CalibrationSet decode_calibration(const std::vector<std::uint8_t>& bytes) {
  const PtkmDocument doc = decode_ptkm(bytes);
  try {
    const json header = json::parse(doc.header_json);
    if (header.value("format", "") != "prunekit-calibration") {
      throw FormatError("PTKM: not a calibration file");
    }
    CalibrationSet calib;
    calib.samples = header.at("samples").get<std::size_t>();
    const auto layers = header.at("n_layers").get<std::size_t>();
    std::size_t cur = 0;
    for (std::size_t l = 0; l < layers; ++l) {
      const std::string p = "layers." + std::to_string(l) + ".";
      calib.attn_proj_input.push_back(take(doc, cur, p + "attn_proj_input"));
      calib.mlp_down_input.push_back(take(doc, cur, p + "mlp_down_input"));
    }
    if (cur != doc.tensors.size()) throw FormatError("PTKM: unexpected extra tensors");
    return calib;
  } catch (const json::exception& e) {
    throw FormatError(std::string("PTKM: malformed calibration header: ") + e.what());
  }
}

std::string model_config_to_json(const ModelConfig& config) { return config_json(config).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return config_from(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

void write_file(const std::string& path, const std::string& text) {
  write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace prunekit
