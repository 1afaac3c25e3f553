#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prunekit {

// Stable numeric values; the C API mirrors them one-to-one.
enum class ErrorCode : int {
  kShape = 1,
  kIndex = 2,
  kSingular = 3,
  kDegenerateCalibration = 4,
  kConfig = 5,
  kFormat = 6,
  kIo = 7,
  kInput = 8,
  kInvalidRatio = 9,
  kInvalidArgument = 10,
  kInternal = 11,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct ShapeError : Error {
  explicit ShapeError(const std::string& w) : Error(ErrorCode::kShape, w) {}
};
struct IndexError : Error {
  explicit IndexError(const std::string& w) : Error(ErrorCode::kIndex, w) {}
};
struct DegenerateCalibrationError : Error {
  explicit DegenerateCalibrationError(const std::string& w)
      : Error(ErrorCode::kDegenerateCalibration, w) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& w) : Error(ErrorCode::kConfig, w) {}
};
struct FormatError : Error {
  explicit FormatError(const std::string& w) : Error(ErrorCode::kFormat, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCode::kIo, w) {}
};
struct InputError : Error {
  explicit InputError(const std::string& w) : Error(ErrorCode::kInput, w) {}
};
struct InvalidRatioError : Error {
  explicit InvalidRatioError(const std::string& w) : Error(ErrorCode::kInvalidRatio, w) {}
};
struct InvalidArgumentError : Error {
  explicit InvalidArgumentError(const std::string& w) : Error(ErrorCode::kInvalidArgument, w) {}
};

// Factorization failed even after regularization. `pivot()` is the first
// non-positive pivot of the failing attempt.
class SingularMatrixError : public Error {
 public:
  SingularMatrixError(std::size_t pivot, const std::string& w)
      : Error(ErrorCode::kSingular, w), pivot_(pivot) {}
  std::size_t pivot() const noexcept { return pivot_; }

 private:
  std::size_t pivot_;
};

}  // namespace prunekit
