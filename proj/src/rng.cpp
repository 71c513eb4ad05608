#include "hybridgen/rng.hpp"

#include <cmath>
#include <numbers>

namespace hg {

std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return mix64(a ^ (mix64(b + 0x9e3779b97f4a7c15ULL) + 0x632be59bd9b4e019ULL + (a << 6) + (a >> 2)));
}

std::uint64_t CounterRng::next_u64() { return mix64(key_ + (++counter_) * 0x9e3779b97f4a7c15ULL); }

double CounterRng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double CounterRng::uniform_open() { return (static_cast<double>(next_u64() >> 12) + 0.5) * 0x1.0p-52; }

double CounterRng::normal() {
  // Box-Muller; one variate per call so every draw consumes exactly two counters.
  const double u1 = uniform_open();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t categorical_from_uniform(std::span<const double> weights, double u) {
  double total = 0.0;
  for (double w : weights) total += w > 0.0 ? w : 0.0;
  if (!(total > 0.0)) {
    auto k = static_cast<std::size_t>(u * static_cast<double>(weights.size()));
    return k < weights.size() ? k : weights.size() - 1;
  }
  const double target = u * total;
  double acc = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (!(weights[i] > 0.0)) continue;
    acc += weights[i];
    last_positive = i;
    if (target < acc) return i;
  }
  return last_positive;
}

std::size_t CounterRng::categorical(std::span<const double> weights) {
  return categorical_from_uniform(weights, uniform());
}

double wrap_angle(double a) {
  const double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a + std::numbers::pi, two_pi);
  if (a < 0) a += two_pi;
  return a - std::numbers::pi;
}

// Best & Fisher (1979) rejection sampler.
double CounterRng::von_mises(double mean, double kappa) {
  if (kappa < 1e-8) return wrap_angle(mean + std::numbers::pi * (2.0 * uniform() - 1.0));
  if (kappa > 1e6) return wrap_angle(mean + normal() / std::sqrt(kappa));
  const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
  const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
  const double r = (1.0 + rho * rho) / (2.0 * rho);
  for (;;) {
    const double u1 = uniform();
    const double z = std::cos(std::numbers::pi * u1);
    const double f = (1.0 + r * z) / (r + z);
    const double c = kappa * (r - f);
    const double u2 = uniform_open();
    if (c * (2.0 - c) - u2 > 0.0 || std::log(c / u2) + 1.0 - c >= 0.0) {
      const double u3 = uniform();
      const double theta = u3 > 0.5 ? std::acos(f) : -std::acos(f);
      return wrap_angle(mean + theta);
    }
  }
}

}  // namespace hg
