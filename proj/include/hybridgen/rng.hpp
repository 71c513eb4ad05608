#pragma once

// Counter-based random draws. A generator is fully determined by its key, so
// two evaluations keyed the same way see identical draws regardless of what
// else was sampled before. Distribution transforms are implemented here rather
// than taken from <random> so results do not depend on the standard library.

#include <cstdint>
#include <span>
#include <vector>

namespace hg {

// A random string r: a stream id and a counter within that stream.
struct Seed {
  std::uint64_t stream = 0;
  std::uint64_t counter = 0;
  bool operator==(const Seed&) const = default;
};

std::uint64_t mix64(std::uint64_t x);
std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b);
inline std::uint64_t seed_key(const Seed& s) { return hash_combine(s.stream, s.counter); }

class CounterRng {
 public:
  explicit CounterRng(std::uint64_t key) : key_(key) {}
  CounterRng(const Seed& seed, std::uint64_t substream) : key_(hash_combine(seed_key(seed), substream)) {}

  // Independent child generator; does not advance this one.
  CounterRng child(std::uint64_t tag) const { return CounterRng(hash_combine(key_, tag)); }

  std::uint64_t next_u64();
  double uniform();       // [0, 1)
  double uniform_open();  // (0, 1)
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  // Draw from a categorical with unnormalized nonnegative weights. All-zero
  // weights fall back to uniform.
  std::size_t categorical(std::span<const double> weights);
  double von_mises(double mean, double kappa);

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

// Inverse-CDF categorical choice from a given uniform u in [0, 1).
std::size_t categorical_from_uniform(std::span<const double> weights, double u);

double wrap_angle(double a);

}  // namespace hg
