#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstddef>
#include <limits>

#include "vip/error.hpp"

namespace vip::stats {

// Continued fraction for the regularized incomplete beta function, evaluated
// with the modified Lentz algorithm.  See Numerical Recipes 6.4 /
// https://en.wikipedia.org/wiki/Beta_function#Incomplete_beta_function
inline double incbeta_cf(double x, double a, double b) {
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 3e-15;
  double qab = a + b;
  double qap = a + 1.0;
  double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m < 400; ++m) {
    double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

inline double regularized_incomplete_beta(double x, double a, double b) {
  if (x < 0.0 || x > 1.0 || a <= 0.0 || b <= 0.0)
    throw ContractViolation("regularized_incomplete_beta: bad arguments");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                    a * std::log(x) + b * std::log1p(-x);
  // Use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) to stay in the region where
  // the continued fraction converges quickly.
  if (x < (a + 1.0) / (a + b + 2.0))
    return std::exp(ln_front) * incbeta_cf(x, a, b) / a;
  return 1.0 - std::exp(ln_front) * incbeta_cf(1.0 - x, b, a) / b;
}

// CDF of Student's t with df degrees of freedom.
inline double t_cdf(double x, double df) {
  if (!(df > 0.0)) throw ContractViolation("t_cdf: df must be positive");
  if (std::isnan(x)) return std::numeric_limits<double>::quiet_NaN();
  if (std::isinf(x)) return x > 0 ? 1.0 : 0.0;
  double tail = regularized_incomplete_beta(df / (x * x + df), 0.5 * df, 0.5) / 2.0;
  return x >= 0.0 ? 1.0 - tail : tail;
}

// Two-sided p-value for a t statistic.
inline double t_two_sided_p(double t, double df) {
  double tail = 1.0 - t_cdf(std::fabs(t), df);
  double p = 2.0 * tail;
  return p > 1.0 ? 1.0 : p;
}

inline double mean(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() == 0) throw ContractViolation("mean of empty vector");
  return v.mean();
}

// Sample variance (n-1 denominator).
inline double sample_variance(const Eigen::Ref<const Eigen::VectorXd>& v) {
  if (v.size() < 2) throw ContractViolation("sample_variance needs >= 2 values");
  double m = v.mean();
  return (v.array() - m).square().sum() / static_cast<double>(v.size() - 1);
}

inline double sample_std(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return std::sqrt(sample_variance(v));
}

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
};

// One-sample t test of H0: mean == mu0, two-sided.
// Zero-variance convention: p = 0 when the constant differs from mu0
// (infinitely strong evidence), p = 1 when it equals mu0.
inline TTestResult one_sample_t(const Eigen::Ref<const Eigen::VectorXd>& v, double mu0) {
  std::size_t n = static_cast<std::size_t>(v.size());
  if (n < 2) throw ContractViolation("one_sample_t needs >= 2 values");
  TTestResult r;
  r.df = static_cast<double>(n - 1);
  double m = v.mean();
  double s = sample_std(v);
  if (s == 0.0) {
    if (m == mu0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = m > mu0 ? std::numeric_limits<double>::infinity()
                    : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = (m - mu0) / (s / std::sqrt(static_cast<double>(n)));
  r.p = t_two_sided_p(r.t, r.df);
  return r;
}

// Welch's unequal-variance two-sample t test, two-sided, with
// Welch-Satterthwaite degrees of freedom.
inline TTestResult welch_two_sample(const Eigen::Ref<const Eigen::VectorXd>& a,
                                    const Eigen::Ref<const Eigen::VectorXd>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw ContractViolation("welch_two_sample needs >= 2 values per group");
  double na = static_cast<double>(a.size());
  double nb = static_cast<double>(b.size());
  double va = sample_variance(a) / na;
  double vb = sample_variance(b) / nb;
  TTestResult r;
  if (va + vb == 0.0) {
    double diff = a.mean() - b.mean();
    r.df = na + nb - 2.0;
    if (diff == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = diff > 0 ? std::numeric_limits<double>::infinity()
                     : -std::numeric_limits<double>::infinity();
      r.p = 0.0;
    }
    return r;
  }
  r.t = (a.mean() - b.mean()) / std::sqrt(va + vb);
  r.df = (va + vb) * (va + vb) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0));
  r.p = t_two_sided_p(r.t, r.df);
  return r;
}

}  // namespace vip::stats
