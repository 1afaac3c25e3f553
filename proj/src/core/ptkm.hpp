#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/transformer.hpp"

namespace prunekit {

// PTKM container: "PTKM" | u32 version (LE) | u64 header length (LE) |
// UTF-8 JSON header | tensor payloads, row-major f64 LE in manifest order.
inline constexpr std::uint32_t kPtkmVersion = 1;

struct NamedTensor {
  std::string name;
  DenseMatrix value;
};

struct PtkmDocument {
  std::string header_json;  // full header, including the "tensors" manifest
  std::vector<NamedTensor> tensors;
};

// `meta_json` must be a JSON object; the manifest is added under "tensors".
std::vector<std::uint8_t> encode_ptkm(const std::string& meta_json,
                                      const std::vector<NamedTensor>& tensors);
PtkmDocument decode_ptkm(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> encode_model(const ModelBundle& model);
ModelBundle decode_model(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> encode_calibration(const CalibrationSet& calib);
CalibrationSet decode_calibration(const std::vector<std::uint8_t>& bytes);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

std::vector<std::uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
void write_file(const std::string& path, const std::string& text);

}  // namespace prunekit
