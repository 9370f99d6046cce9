#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

namespace gffperc {

// Small statistics toolkit shared by the Monte Carlo estimators and the
// acceptance checks: running moments, binomial intervals, chi-square
// goodness-of-fit, and least-squares growth-rate fits.

struct RunningMoments {
  std::size_t n = 0;
  double mean = 0.0;
  double m2 = 0.0;  // sum of squared deviations (Welford)

  void add(double x) {
    ++n;
    double delta = x - mean;
    mean += delta / static_cast<double>(n);
    m2 += delta * (x - mean);
  }
  double variance() const { return n > 1 ? m2 / static_cast<double>(n - 1) : 0.0; }
  double stderror() const {
    return n > 1 ? std::sqrt(variance() / static_cast<double>(n)) : 0.0;
  }
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  double width() const { return hi - lo; }
};

// Wilson 95% score interval for a binomial proportion.
inline Interval wilson95(std::size_t successes, std::size_t trials) {
  if (trials == 0) return {0.0, 1.0};
  const double z = 1.959963984540054;
  double n = static_cast<double>(trials);
  double p = static_cast<double>(successes) / n;
  double denom = 1.0 + z * z / n;
  double centre = (p + z * z / (2.0 * n)) / denom;
  double half = z * std::sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

// Survival function of the chi-square distribution with k degrees of freedom.
inline double chi_square_pvalue(double statistic, double dof) {
  if (dof <= 0.0) throw std::invalid_argument("chi_square_pvalue: dof must be positive");
  if (statistic <= 0.0) return 1.0;
  return boost::math::gamma_q(dof / 2.0, statistic / 2.0);
}

// Pearson chi-square test that two histograms over the same bins come from
// the same distribution (two-sample version; both counts random).  Bins with
// combined count below `min_expected` are pooled into the previous bin.
inline double two_sample_chi_square_pvalue(const std::vector<double>& counts_a,
                                           const std::vector<double>& counts_b,
                                           double min_expected = 5.0) {
  if (counts_a.size() != counts_b.size())
    throw std::invalid_argument("chi-square: histograms must share bins");
  // Pool sparse bins left to right so every pooled bin has enough mass.
  std::vector<double> a, b;
  double acc_a = 0.0, acc_b = 0.0;
  for (std::size_t i = 0; i < counts_a.size(); ++i) {
    acc_a += counts_a[i];
    acc_b += counts_b[i];
    if (acc_a + acc_b >= min_expected) {
      a.push_back(acc_a);
      b.push_back(acc_b);
      acc_a = acc_b = 0.0;
    }
  }
  if (acc_a + acc_b > 0.0) {
    if (a.empty()) {
      a.push_back(acc_a);
      b.push_back(acc_b);
    } else {
      a.back() += acc_a;
      b.back() += acc_b;
    }
  }
  double na = 0.0, nb = 0.0;
  for (double v : a) na += v;
  for (double v : b) nb += v;
  if (na == 0.0 || nb == 0.0 || a.size() < 2) return 1.0;
  // Statistic for homogeneity of two multinomials over shared bins.
  double stat = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double pooled = (a[i] + b[i]) / (na + nb);
    double ea = na * pooled;
    double eb = nb * pooled;
    if (ea > 0.0) stat += (a[i] - ea) * (a[i] - ea) / ea;
    if (eb > 0.0) stat += (b[i] - eb) * (b[i] - eb) / eb;
  }
  return chi_square_pvalue(stat, static_cast<double>(a.size() - 1));
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual_rms = 0.0;  // root mean squared residual
  std::size_t points = 0;
};

// Ordinary least squares y ~ intercept + slope * x.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw std::invalid_argument("fit_line: need at least two points");
  double n = static_cast<double>(x.size());
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  double denom = n * sxx - sx * sx;
  if (denom == 0.0) throw std::invalid_argument("fit_line: degenerate abscissae");
  LineFit fit;
  fit.slope = (n * sxy - sx * sy) / denom;
  fit.intercept = (sy - fit.slope * sx) / n;
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double r = y[i] - fit.intercept - fit.slope * x[i];
    ss += r * r;
  }
  fit.residual_rms = std::sqrt(ss / n);
  fit.points = x.size();
  return fit;
}

// Percentile of a sample (linear interpolation), q in [0,1].
inline double percentile(std::vector<double> sample, double q) {
  if (sample.empty()) throw std::invalid_argument("percentile: empty sample");
  std::sort(sample.begin(), sample.end());
  double pos = q * static_cast<double>(sample.size() - 1);
  std::size_t lo = static_cast<std::size_t>(pos);
  std::size_t hi = std::min(lo + 1, sample.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return sample[lo] * (1.0 - frac) + sample[hi] * frac;
}

}  // namespace gffperc
