#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace packmt {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

/// Deterministic RNG. Wraps std::mt19937_64 (whose output sequence is fixed
/// by the standard) and derives all distributions with plain arithmetic, so
/// the same seed gives the same stream on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  /// Uniform integer in [0, n).
  uint64_t uniform_int(uint64_t n) {
    require(n > 0, "uniform_int: n must be positive");
    return static_cast<uint64_t>(uniform() * static_cast<double>(n));
  }

  /// Standard normal via Box-Muller.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925287 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  /// Index sampled from a discrete distribution (probabilities sum to ~1).
  size_t categorical(const std::vector<double>& probs) {
    double x = uniform();
    double acc = 0.0;
    for (size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (x < acc) return i;
    }
    return probs.size() - 1;
  }

  /// Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_int(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

// --- hashing ---------------------------------------------------------------

constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ull;
constexpr uint64_t kFnvPrime = 0x100000001b3ull;

struct Fnv64 {
  uint64_t state = kFnvOffset;
  void update(const void* data, size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
      state ^= p[i];
      state *= kFnvPrime;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  uint64_t digest() const { return state; }
};

std::string hex64(uint64_t v);

// --- utf-8 -----------------------------------------------------------------

/// Splits a UTF-8 string into codepoint-sized substrings. Invalid bytes are
/// kept as single-byte units.
std::vector<std::string> utf8_chars(std::string_view s);

std::string utf8_encode(char32_t cp);

size_t utf8_length(std::string_view s);

// --- strings ---------------------------------------------------------------

std::vector<std::string> split_ws(std::string_view s);
std::vector<std::string> split_on(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
std::string trim(std::string_view s);

// --- files -----------------------------------------------------------------

std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

}  // namespace packmt
