#pragma once

// Reference computations used by the tests. Each one is written from first
// principles and shares no code with the library under test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

namespace oracle {

inline constexpr double kPi = 3.14159265358979323846;

/// Standard normal CDF by composite Simpson integration of the density.
inline double phi(double z) {
  if (z < -12) return 0.0;
  if (z > 12) return 1.0;
  const int n = 4000;
  const double a = -12.0, h = (z - a) / n;
  auto f = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2 * kPi); };
  double s = f(a) + f(z);
  for (int i = 1; i < n; ++i) s += (i % 2 ? 4 : 2) * f(a + i * h);
  return s * h / 3;
}

/// Area of the intersection of two discs by midpoint integration over the
/// smaller disc.
inline double disc_overlap(double d, double r_big, double r_small, int n = 1200) {
  double inside = 0.0;
  const double cell = 2 * r_small / n;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double x = -r_small + (i + 0.5) * cell, y = -r_small + (j + 0.5) * cell;
      if (x * x + y * y > r_small * r_small) continue;
      if ((x + d) * (x + d) + y * y <= r_big * r_big) inside += cell * cell;
    }
  return inside;
}

/// Fraction of a 2-D isotropic Gaussian (sigma) centred at the origin that
/// falls in [x0, x1] x [y0, y1], by numeric quadrature of the product.
inline double gaussian_box(double sigma, double x0, double x1, double y0, double y1) {
  auto one = [&](double lo, double hi) { return phi(hi / sigma) - phi(lo / sigma); };
  return one(x0, x1) * one(y0, y1);
}

/// Thermal step response of a first-order system.
inline double thermal(double power_pct, double t_s, double full = 0.792, double tau = 0.25) {
  return full * power_pct / 100.0 * (1.0 - std::exp(-t_s / tau));
}

/// Two-sided CUSUM written as a direct transcription of the recursion.
inline std::vector<std::size_t> cusum(const std::vector<double>& x, double mu0, double k, double h) {
  std::vector<std::size_t> alarms;
  double sp = 0, sn = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sp = std::max(0.0, sp + (x[i] - mu0 - k));
    sn = std::max(0.0, sn + (mu0 - x[i] - k));
    if (sp > h || sn > h) {
      alarms.push_back(i);
      sp = sn = 0;
    }
  }
  return alarms;
}

/// Mann-Whitney estimate of P(score_pos > score_neg) + 0.5 P(tie).
inline double mann_whitney_auc(const std::vector<double>& pos, const std::vector<double>& neg) {
  double wins = 0.0;
  for (double p : pos)
    for (double n : neg) wins += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
  return wins / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

/// Sample mean and unbiased standard deviation.
inline std::pair<double, double> mean_sd(const std::vector<double>& v) {
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size() - 1))};
}

inline double correlation(const std::vector<double>& a, const std::vector<double>& b) {
  const auto [ma, sa] = mean_sd(a);
  const auto [mb, sb] = mean_sd(b);
  double c = 0;
  for (std::size_t i = 0; i < a.size(); ++i) c += (a[i] - ma) * (b[i] - mb);
  return c / (static_cast<double>(a.size() - 1) * sa * sb);
}

/// Expected TDC Hamming weight under Gaussian dither: E[floor(u + e)] with
/// u the code length in taps and e ~ N(0, s^2) in taps.
inline double tdc_expected_weight(double u, double s) {
  double e = 0.0;
  const long lo = static_cast<long>(std::floor(u - 10 * s)) - 1, hi = static_cast<long>(std::ceil(u + 10 * s)) + 1;
  for (long k = lo; k <= hi; ++k) e += k * (phi((k + 1 - u) / s) - phi((k - u) / s));
  return e;
}

/// Fresh scratch directory under the test working directory.
inline std::filesystem::path scratch(const std::string& name) {
  const auto p = std::filesystem::current_path() / "scratch" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p.parent_path());
  return p;
}

}  // namespace oracle
