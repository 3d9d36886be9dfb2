#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

namespace smoothcert {

inline double normal_cdf(double z) {
  return 0.5 * std::erfc(-z * 0.70710678118654752440084436210485);
}

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) * 0.39894228040143267793994605993438;
}

// Inverse standard normal CDF. Wichura's rational approximations give ~1e-15
// already; one Halley step against the erfc-based CDF polishes the result.
inline double phi_inv(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::domain_error("phi_inv: p must be inside (0, 1)");
  double q = p - 0.5;
  double z;
  if (std::fabs(q) <= 0.425) {
    double r = 0.180625 - q * q;
    double num =
        (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
              6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
            1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
          1.3314166789178437745e2) * r + 3.3871328727963666080e0);
    double den =
        (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
              3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
            5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
          4.2313330701600911252e1) * r + 1.0);
    z = q * num / den;
  } else {
    double r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double num, den;
    if (r <= 5.0) {
      r -= 1.6;
      num =
          (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
              3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
            4.63033784615654529590e0) * r + 1.42343711074968357734e0);
      den =
          (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
              6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
            2.05319162663775882187e0) * r + 1.0);
    } else {
      r -= 5.0;
      num =
          (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
              2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
            5.46378491116411436990e0) * r + 6.65790464350110377720e0);
      den =
          (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
              1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
            5.99832206555887937690e-1) * r + 1.0);
    }
    z = num / den;
    if (q < 0.0) z = -z;
  }
  double pdf = normal_pdf(z);
  if (pdf > 0.0 && std::isfinite(pdf)) {
    double d = (normal_cdf(z) - p) / pdf;
    z -= d / (1.0 + 0.5 * z * d);
  }
  return z;
}

namespace detail {

inline double lchoose(int64_t n, int64_t k) {
  return std::lgamma(double(n) + 1.0) - std::lgamma(double(k) + 1.0) -
         std::lgamma(double(n - k) + 1.0);
}

inline double log1mexp(double l) {
  // log(1 - exp(l)) for l <= 0
  if (l >= 0.0) return -INFINITY;
  return l > -0.6931471805599453 ? std::log(-std::expm1(l))
                                 : std::log1p(-std::exp(l));
}

// log P[Bin(n,p) >= x], evaluated by summing pmf terms with the ratio
// recurrence from whichever end keeps the terms monotonically decreasing.
inline double log_binom_upper_tail(int64_t x, int64_t n, double p) {
  if (x <= 0) return 0.0;
  if (x > n) return -INFINITY;
  if (p <= 0.0) return -INFINITY;
  if (p >= 1.0) return 0.0;
  double odds = p / (1.0 - p);
  auto up_ratio = [&](int64_t j) { return double(n - j) / double(j + 1) * odds; };
  if (up_ratio(x) < 1.0) {
    // Terms decay from j = x upward.
    double logt0 = lchoose(n, x) + double(x) * std::log(p) +
                   double(n - x) * std::log1p(-p);
    double s = 1.0, t = 1.0;
    for (int64_t j = x; j < n; ++j) {
      t *= up_ratio(j);
      s += t;
      if (t < s * 1e-18) break;
    }
    return logt0 + std::log(s);
  }
  // Otherwise sum the complementary lower tail downward from x-1.
  int64_t k = x - 1;
  double logt0 = lchoose(n, k) + double(k) * std::log(p) +
                 double(n - k) * std::log1p(-p);
  double s = 1.0, t = 1.0;
  for (int64_t j = k; j > 0; --j) {
    t *= double(j) / double(n - j + 1) / odds;
    s += t;
    if (t < s * 1e-18) break;
  }
  return log1mexp(logt0 + std::log(s));
}

}  // namespace detail

// P[Bin(n,p) >= x]
inline double binom_upper_tail(int64_t x, int64_t n, double p) {
  return std::exp(detail::log_binom_upper_tail(x, n, p));
}

// P[Bin(n,p) <= k]
inline double binom_lower_cdf(int64_t k, int64_t n, double p) {
  return std::exp(detail::log_binom_upper_tail(n - k, n, 1.0 - p));
}

// One-sided Clopper-Pearson lower confidence bound at level 1-alpha: the p
// solving P[Bin(n,p) >= x] = alpha, found by bisection on the exact tail.
inline double binom_lower_bound(int64_t x, int64_t n, double alpha) {
  if (n < 1) throw std::domain_error("binom_lower_bound: n must be >= 1");
  if (x < 0 || x > n)
    throw std::domain_error("binom_lower_bound: x must be in [0, n]");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::domain_error("binom_lower_bound: alpha must be inside (0, 1)");
  if (x == 0) return 0.0;
  double la = std::log(alpha);
  double lo = 0.0, hi = 1.0;
  while (hi - lo > 1e-12) {
    double mid = 0.5 * (lo + hi);
    if (detail::log_binom_upper_tail(x, n, mid) <= la)
      lo = mid;
    else
      hi = mid;
  }
  return lo;
}

// Two-sided exact binomial test p-value against H0: success prob = p0.
inline double binom_two_sided_pvalue(int64_t k, int64_t n, double p0 = 0.5) {
  if (n < 1) throw std::domain_error("binom_two_sided_pvalue: n must be >= 1");
  if (k < 0 || k > n)
    throw std::domain_error("binom_two_sided_pvalue: k must be in [0, n]");
  double lo = binom_lower_cdf(k, n, p0);
  double hi = binom_upper_tail(k, n, p0);
  double p = 2.0 * std::min(lo, hi);
  return std::min(1.0, p);
}

}  // namespace smoothcert
