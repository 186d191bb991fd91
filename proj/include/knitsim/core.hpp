#pragma once

#include <cstddef>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace knitsim {

// Bad arguments: dimension mismatch, non-Hermitian input, out-of-range ε/δ.
struct InvalidInput : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A dimension would exceed the configured cap.
struct ResourceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Probabilities drifted further than rounding can explain.
struct NumericIntegrity : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An object was used in a mode it does not support.
struct Misuse : std::logic_error {
  using std::logic_error::logic_error;
};

inline constexpr std::size_t kDefaultMaxDim = std::size_t{1} << 14;

// Dimension cap, overridable through KNITSIM_MAX_DIM. Read once per process.
inline std::size_t max_dim() {
  static const std::size_t cap = [] {
    const char* env = std::getenv("KNITSIM_MAX_DIM");
    if (env == nullptr || *env == '\0') return kDefaultMaxDim;
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0' || v == 0) return kDefaultMaxDim;
    return static_cast<std::size_t>(v);
  }();
  return cap;
}

inline void check_dim(std::size_t dim, const char* what) {
  if (dim > max_dim()) {
    throw ResourceError(std::string(what) + ": dimension " + std::to_string(dim) +
                        " exceeds cap " + std::to_string(max_dim()));
  }
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInput(msg);
}

inline bool is_power_of_two(std::size_t x) { return x != 0 && (x & (x - 1)) == 0; }

inline int log2_exact(std::size_t x) {
  require(is_power_of_two(x), "dimension " + std::to_string(x) + " is not a power of two");
  int n = 0;
  while ((std::size_t{1} << n) < x) ++n;
  return n;
}

}  // namespace knitsim
