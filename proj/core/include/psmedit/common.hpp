#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace psmedit {

using TokenId = std::int32_t;
using WordId = std::int32_t;
using TokenSeq = std::vector<TokenId>;
using Text = std::vector<WordId>;

/// Log-domain zero. Every likelihood routine returns exactly this value for
/// impossible events.
inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline bool is_neg_inf(double x) { return x == kNegInf; }

using Rng = std::mt19937_64;

/// splitmix64 finalizer; the building block for derived rng streams.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a base seed and a tuple of
/// coordinates, e.g. (seed, step, query, candidate).
template <typename... Ts>
constexpr std::uint64_t derive_seed(std::uint64_t base, Ts... coords) {
  std::uint64_t h = mix64(base);
  ((h = mix64(h ^ mix64(static_cast<std::uint64_t>(coords) + 0x632be59bd9b4e019ULL))), ...);
  return h;
}

/// Uniform integer in [lo, hi]. Implemented directly so that streams are
/// identical across standard library implementations.
inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(rng());
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % span;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return lo + static_cast<std::int64_t>(r % span);
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Error taxonomy. Each maps onto one of the failure classes callers are
// expected to distinguish.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DomainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CapacityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct AlignmentError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BuildError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace psmedit
