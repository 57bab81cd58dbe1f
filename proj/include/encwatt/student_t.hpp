#pragma once

// Student's t distribution: CDF and quantiles through the regularized
// incomplete beta function.

#include <cmath>
#include <cstddef>
#include <limits>

#include "encwatt/error.hpp"

namespace encwatt {

namespace detail {

// Continued fraction for I_x(a, b) (modified Lentz), valid for
// x < (a + 1) / (a + b + 2).
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-16;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 10000; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < eps) break;
  }
  return h;
}

inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

}  // namespace detail

/// Regularized incomplete beta function I_x(a, b) for a, b > 0, x in [0, 1].
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("incomplete_beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw DomainError("incomplete_beta: x outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  const double log_front =
      a * std::log(x) + b * std::log1p(-x) - detail::log_beta(a, b);
  if (x < (a + 1.0) / (a + b + 2.0))
    return std::exp(log_front) * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - std::exp(log_front) * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

/// Inverse of I_x(a, b) in x. Safeguarded Newton iteration inside a
/// shrinking bisection bracket; converges to a few ulps.
inline double inverse_incomplete_beta(double a, double b, double p) {
  if (!(a > 0.0) || !(b > 0.0))
    throw DomainError("inverse_incomplete_beta: a and b must be positive");
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("inverse_incomplete_beta: p outside [0, 1]");
  if (p == 0.0) return 0.0;
  if (p == 1.0) return 1.0;

  const double lbeta = detail::log_beta(a, b);
  double lo = 0.0;
  double hi = 1.0;
  double x = 0.5;
  for (int iter = 0; iter < 400; ++iter) {
    const double f = incomplete_beta(a, b, x) - p;
    if (f == 0.0) return x;
    if (f < 0.0)
      lo = x;
    else
      hi = x;
    const double log_pdf = (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - lbeta;
    const double pdf = std::exp(log_pdf);
    double next = x - f / pdf;
    if (!(next > lo && next < hi) || !std::isfinite(next)) next = 0.5 * (lo + hi);
    if (std::fabs(next - x) <= 4.0 * std::numeric_limits<double>::epsilon() * x) return next;
    if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) return 0.5 * (lo + hi);
    x = next;
  }
  return x;
}

/// P(T <= t) for T ~ Student t with `dof` degrees of freedom.
inline double t_cdf(double t, double dof) {
  if (!(dof > 0.0)) throw DomainError("t_cdf: degrees of freedom must be positive");
  const double x = dof / (dof + t * t);
  const double tail = 0.5 * incomplete_beta(0.5 * dof, 0.5, x);
  return t > 0.0 ? 1.0 - tail : tail;
}

/// Which quantile of the t distribution a confidence level selects.
enum class QuantileConvention {
  one_sided,  // t at quantile alpha
  two_sided,  // t at quantile (1 + alpha) / 2
};

/// Critical value t with CDF_t(dof)(t) = alpha (one-sided), or the
/// (1 + alpha) / 2 quantile for the two-sided convention.
inline double t_critical(double alpha, std::size_t dof,
                         QuantileConvention conv = QuantileConvention::one_sided) {
  if (dof == 0) throw DomainError("t_critical: dof must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("t_critical: alpha must lie in (0, 1)");
  const double q = conv == QuantileConvention::two_sided ? 0.5 * (1.0 + alpha) : alpha;
  if (q == 0.5) return 0.0;
  const double upper = q > 0.5 ? 1.0 - q : q;  // tail mass beyond |t|
  const double nu = static_cast<double>(dof);
  // P(|T| > t) = I_{nu/(nu+t^2)}(nu/2, 1/2) = 2 * upper
  const double x = inverse_incomplete_beta(0.5 * nu, 0.5, 2.0 * upper);
  const double t = std::sqrt(nu * (1.0 - x) / x);
  return q > 0.5 ? t : -t;
}

}  // namespace encwatt
