#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace ganprint {

// Error categories double as process exit codes (see tools/ganprint.cpp).
enum class ErrorCode : int {
  ok = 0,
  internal = 1,
  usage = 2,
  dependency = 3,
  numerical = 4,
  io = 5,
  spec_violation = 6,
  key = 7,
  integrity = 8,
  kind_mismatch = 9,
};

const char* error_code_name(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

struct UsageError : Error {
  explicit UsageError(const std::string& w) : Error(ErrorCode::usage, w) {}
};
struct SpecViolation : Error {
  explicit SpecViolation(const std::string& w) : Error(ErrorCode::spec_violation, w) {}
};
struct KeyError : Error {
  explicit KeyError(const std::string& w) : Error(ErrorCode::key, w) {}
};
struct DependencyError : Error {
  explicit DependencyError(const std::string& w) : Error(ErrorCode::dependency, w) {}
};
struct NumericalFailure : Error {
  explicit NumericalFailure(const std::string& w) : Error(ErrorCode::numerical, w) {}
};
struct IoError : Error {
  explicit IoError(const std::string& w) : Error(ErrorCode::io, w) {}
};
struct IntegrityError : Error {
  explicit IntegrityError(const std::string& w) : Error(ErrorCode::integrity, w) {}
};
struct KindMismatch : Error {
  explicit KindMismatch(const std::string& w) : Error(ErrorCode::kind_mismatch, w) {}
};

// ---------------------------------------------------------------------------
// Randomness
//
// Everything random in the pipeline is drawn from a counter-based generator:
// the n-th 64-bit word of a stream is a pure function of (key, n). Streams
// are split by hashing a tag into a fresh key, so results never depend on
// evaluation order or thread scheduling.
// ---------------------------------------------------------------------------

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

class CounterRng {
 public:
  constexpr explicit CounterRng(std::uint64_t key = 0) noexcept : key_(mix64(key)) {}

  constexpr std::uint64_t key() const noexcept { return key_; }

  constexpr std::uint64_t at(std::uint64_t counter) const noexcept {
    return mix64(key_ ^ mix64(counter + 0x632BE59BD9B4E019ULL));
  }

  constexpr CounterRng split(std::uint64_t tag) const noexcept {
    CounterRng child;
    child.key_ = mix64(key_ + mix64(tag ^ 0xD6E8FEB86659FD93ULL));
    return child;
  }

 private:
  std::uint64_t key_;
};

// Sequential view over a CounterRng.
class RngStream {
 public:
  explicit RngStream(CounterRng rng) noexcept : rng_(rng) {}
  explicit RngStream(std::uint64_t seed) noexcept : rng_(seed) {}

  std::uint64_t next_u64() noexcept { return rng_.at(counter_++); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift with rejection, exact for any n.
    const std::uint64_t threshold = (0 - n) % n;
    for (;;) {
      const unsigned __int128 m = static_cast<unsigned __int128>(next_u64()) * n;
      if (static_cast<std::uint64_t>(m) >= threshold) return static_cast<std::uint64_t>(m >> 64);
    }
  }

  // Standard normal via Box-Muller; the second value of each pair is cached.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <class T>
  void shuffle(std::vector<T>& v) noexcept {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  CounterRng rng_;
  std::uint64_t counter_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Stable seed derivation from a master seed and a label.
std::uint64_t derive_seed(std::uint64_t master, std::string_view label, std::uint64_t index = 0) noexcept;

// ---------------------------------------------------------------------------
// Hashing
// ---------------------------------------------------------------------------

// FNV-1a 64-bit.
std::uint64_t fnv1a64(std::span<const std::byte> bytes, std::uint64_t seed = 0xCBF29CE484222325ULL) noexcept;
std::uint64_t fnv1a64(std::string_view text) noexcept;
std::string hex64(std::uint64_t v);

// ---------------------------------------------------------------------------
// Parallelism
// ---------------------------------------------------------------------------

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index must only
// touch its own output slot; results are therefore independent of `workers`.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace ganprint
