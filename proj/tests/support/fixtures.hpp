#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include "core/pipeline.hpp"

namespace prunekit::testing {

inline std::string bundled_text() {
  std::ifstream in(PRUNEKIT_DATA_DIR "/calibration.txt", std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Two-layer model with a 16 x 16 calibration batch: seconds, not minutes.
inline PipelineConfig small_pipeline(std::uint64_t seed = 7) {
  PipelineConfig c;
  c.model.n_layers = 2;
  c.model.d_model = 32;
  c.model.n_heads = 4;
  c.model.d_inter = 64;
  c.model.max_seq = 32;
  c.model.seed = seed;
  c.calib_samples = 16;
  c.calib_seq_len = 16;
  return c;
}

}  // namespace prunekit::testing
