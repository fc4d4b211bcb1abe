#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include "cedar/common.hpp"

namespace cedar {

// mt19937_64 is fully specified by the standard, but the std distribution
// adaptors are not; the transforms below are hand-rolled so that a seed
// produces the same stream on every platform/toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  // uniform on [0,1), 53-bit resolution
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // uniform on (0,1), never 0 (safe under log)
  double uniform_pos() {
    return (static_cast<double>(eng_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Marsaglia polar method with one cached value.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
  }

  // unit-variance Laplace (scale 1/sqrt(2)) via inverse CDF
  double laplace_unit() {
    double u = uniform_pos() - 0.5;
    double b = 1.0 / std::sqrt(2.0);
    return (u < 0 ? b : -b) * std::log1p(-2.0 * std::fabs(u));
  }

  // Gamma(shape, scale 1), Marsaglia–Tsang; valid for any shape > 0.
  // For shape < 1 uses the boost G_a = G_{a+1} * U^{1/a}, clamped away from
  // zero: the boost can underflow for astronomically small U (prob < 1e-13)
  // and downstream code divides by the draw.
  double gamma(double shape) {
    require(shape > 0.0, "gamma shape must be positive, got ", shape);
    if (shape < 1.0) {
      double g = gamma(shape + 1.0);
      double u = uniform_pos();
      double boosted = g * std::pow(u, 1.0 / shape);
      return boosted > 1e-280 ? boosted : 1e-280;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / (3.0 * std::sqrt(d));
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      double u = uniform_pos();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  // InverseGamma(shape, rate): density ~ x^{-shape-1} exp(-rate/x)
  double inv_gamma(double shape, double rate) { return rate / gamma(shape); }

  double chisq(double dof) { return 2.0 * gamma(0.5 * dof); }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace cedar
