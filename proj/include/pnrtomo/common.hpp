#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace pnrtomo {

inline constexpr const char* kToolName = "pnrtomo";
inline constexpr const char* kToolVersion = "0.1.0";

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MaskMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

// thrown when a computation fails for numerical reasons (singular systems,
// non-convergence, undefined moments); the CLI maps this to exit code 2
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

// running byte tally with a high-water mark; the QP solver accounts for the
// buffers it owns through one of these so peak usage is deterministic and
// comparable across platforms (process RSS is reported separately)
class MemTally {
 public:
  void add(std::int64_t bytes) {
    current_ += bytes;
    if (current_ > peak_) peak_ = current_;
  }
  void sub(std::int64_t bytes) { current_ -= bytes; }
  std::int64_t current() const { return current_; }
  std::int64_t peak() const { return peak_; }

  static std::int64_t bytes_of(const Matrix& m) {
    return static_cast<std::int64_t>(m.size()) * static_cast<std::int64_t>(sizeof(double));
  }
  static std::int64_t bytes_of(const Vector& v) {
    return static_cast<std::int64_t>(v.size()) * static_cast<std::int64_t>(sizeof(double));
  }

 private:
  std::int64_t current_ = 0;
  std::int64_t peak_ = 0;
};

// FNV-1a, used to stamp output sidecars with a stable hash of the run config
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace pnrtomo
