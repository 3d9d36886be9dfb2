#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "smoothcert/rng.hpp"
#include "smoothcert/stats.hpp"

using namespace smoothcert;

namespace {

// Long-double oracle for the standard normal CDF and its inverse (bisection).
long double cdf_ld(long double z) {
  return 0.5L * erfcl(-z * 0.707106781186547524400844362104849L);
}

long double phi_inv_oracle(long double p) {
  long double lo = -40.0L, hi = 40.0L;
  for (int i = 0; i < 200; ++i) {
    long double mid = 0.5L * (lo + hi);
    if (cdf_ld(mid) < p)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5L * (lo + hi);
}

// Oracle: P[Bin(n,p) >= x] by direct term summation in long double.
long double tail_oracle(int64_t x, int64_t n, long double p) {
  if (x <= 0) return 1.0L;
  if (x > n) return 0.0L;
  long double s = 0.0L;
  for (int64_t j = x; j <= n; ++j) {
    long double lt = lgammal((long double)n + 1.0L) -
                     lgammal((long double)j + 1.0L) -
                     lgammal((long double)(n - j) + 1.0L) +
                     (long double)j * logl(p) +
                     (long double)(n - j) * log1pl(-p);
    s += expl(lt);
  }
  return s;
}

// Oracle: Clopper-Pearson lower bound via bisection on tail_oracle.
long double cp_oracle(int64_t x, int64_t n, long double alpha) {
  if (x == 0) return 0.0L;
  long double lo = 0.0L, hi = 1.0L;
  for (int i = 0; i < 80; ++i) {
    long double mid = 0.5L * (lo + hi);
    if (tail_oracle(x, n, mid) <= alpha)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5L * (lo + hi);
}

}  // namespace

TEST(Stats, NormalCdfKnownValues) {
  EXPECT_DOUBLE_EQ(normal_cdf(0.0), 0.5);
  EXPECT_NEAR(normal_cdf(1.0), 0.841344746068542949, 1e-15);
  EXPECT_NEAR(normal_cdf(-1.0), 0.158655253931457051, 1e-15);
  EXPECT_NEAR(normal_cdf(1.959963984540054), 0.975, 1e-15);
  EXPECT_NEAR(normal_cdf(-6.0), 9.865876450376946e-10, 1e-22);
}

TEST(Stats, NormalPdfKnownValues) {
  EXPECT_NEAR(normal_pdf(0.0), 0.3989422804014327, 1e-16);
  EXPECT_NEAR(normal_pdf(1.0), 0.24197072451914337, 1e-16);
  EXPECT_DOUBLE_EQ(normal_pdf(2.0), normal_pdf(-2.0));
}

TEST(Stats, PhiInvMatchesBisectionOracle) {
  // Coarse sweep here; the acceptance suite runs the dense grid.
  std::vector<double> ps;
  for (int i = 0; i <= 1000; ++i)
    ps.push_back(1e-9 + (1.0 - 2e-9) * double(i) / 1000.0);
  ps.insert(ps.end(), {1e-9, 1e-7, 1e-4, 0.025, 0.423, 0.426, 0.5, 0.574,
                       0.577, 0.975, 0.999, 0.9999999, 1.0 - 1e-9});
  for (double p : ps) {
    double z = phi_inv(p);
    double want = double(phi_inv_oracle((long double)p));
    EXPECT_NEAR(z, want, 1e-9) << "p=" << p;
  }
}

TEST(Stats, PhiInvKnownQuantiles) {
  EXPECT_DOUBLE_EQ(phi_inv(0.5), 0.0);
  EXPECT_NEAR(phi_inv(0.975), 1.959963984540054, 1e-12);
  EXPECT_NEAR(phi_inv(0.999), 3.090232306167813, 1e-12);
  EXPECT_NEAR(phi_inv(0.841344746068542949), 1.0, 1e-12);
}

TEST(Stats, PhiInvIsOddAroundHalf) {
  for (double p : {0.001, 0.1, 0.25, 0.45, 0.49999})
    EXPECT_NEAR(phi_inv(p), -phi_inv(1.0 - p), 1e-12) << "p=" << p;
}

TEST(Stats, PhiInvRoundTripsThroughCdf) {
  for (double z = -6.0; z <= 6.0 + 1e-12; z += 0.1)
    EXPECT_NEAR(phi_inv(normal_cdf(z)), z, 1e-6) << "z=" << z;
}

TEST(Stats, PhiInvRejectsBoundaryAndOutside) {
  EXPECT_THROW(phi_inv(0.0), std::domain_error);
  EXPECT_THROW(phi_inv(1.0), std::domain_error);
  EXPECT_THROW(phi_inv(-0.25), std::domain_error);
  EXPECT_THROW(phi_inv(1.25), std::domain_error);
  EXPECT_THROW(phi_inv(std::nan("")), std::domain_error);
}

TEST(Stats, BinomialTailsMatchEnumerationSmallN) {
  for (double p : {0.1, 0.3, 0.5, 0.7, 0.937}) {
    for (int64_t x = 0; x <= 11; ++x) {
      double got = binom_upper_tail(x, 10, p);
      double want = double(tail_oracle(x, 10, (long double)p));
      EXPECT_NEAR(got, want, 1e-12 + 1e-12 * want) << "x=" << x << " p=" << p;
    }
    for (int64_t k = 0; k <= 10; ++k) {
      double got = binom_lower_cdf(k, 10, p);
      double want = 1.0 - double(tail_oracle(k + 1, 10, (long double)p));
      EXPECT_NEAR(got, want, 1e-12) << "k=" << k << " p=" << p;
    }
  }
}

TEST(Stats, BinomialTailExtremeArguments) {
  EXPECT_DOUBLE_EQ(binom_upper_tail(0, 100, 0.3), 1.0);
  EXPECT_DOUBLE_EQ(binom_upper_tail(101, 100, 0.3), 0.0);
  EXPECT_DOUBLE_EQ(binom_upper_tail(50, 100, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(binom_upper_tail(50, 100, 1.0), 1.0);
  // Far tail (about 1e-37) stays accurate in log space.
  double got = binom_upper_tail(700, 1000, 0.5);
  double want = double(tail_oracle(700, 1000, 0.5L));
  ASSERT_GT(want, 0.0);
  EXPECT_NEAR(got / want, 1.0, 1e-10);
}

TEST(Stats, LowerBoundMatchesIndependentOracle) {
  struct Case {
    int64_t x, n;
    double alpha;
  };
  for (Case c : std::vector<Case>{{70, 100, 0.05},
                                  {1, 7, 0.001},
                                  {9990, 10000, 0.001},
                                  {500, 1000, 0.5},
                                  {3, 3, 0.05}}) {
    double got = binom_lower_bound(c.x, c.n, c.alpha);
    double want = double(cp_oracle(c.x, c.n, (long double)c.alpha));
    EXPECT_NEAR(got, want, 1e-9) << "x=" << c.x << " n=" << c.n;
  }
}

TEST(Stats, LowerBoundClosedFormAtFullCount) {
  // x = n makes the tail p^n, so the bound is alpha^(1/n).
  for (int64_t n : {1, 2, 10, 100, 10000}) {
    for (double alpha : {0.001, 0.05, 0.5}) {
      double got = binom_lower_bound(n, n, alpha);
      EXPECT_NEAR(got, std::pow(alpha, 1.0 / double(n)), 1e-9)
          << "n=" << n << " alpha=" << alpha;
    }
  }
}

TEST(Stats, LowerBoundZeroSuccessesIsZero) {
  EXPECT_DOUBLE_EQ(binom_lower_bound(0, 10, 0.05), 0.0);
  EXPECT_DOUBLE_EQ(binom_lower_bound(0, 1, 0.5), 0.0);
}

TEST(Stats, LowerBoundMonotoneInCountAndLevel) {
  double prev = -1.0;
  for (int64_t x = 0; x <= 100; x += 5) {
    double b = binom_lower_bound(x, 100, 0.05);
    EXPECT_GT(b, prev) << "x=" << x;
    prev = b;
  }
  prev = -1.0;
  for (double alpha : {0.001, 0.01, 0.05, 0.2, 0.5, 0.9}) {
    double b = binom_lower_bound(70, 100, alpha);
    EXPECT_GT(b, prev) << "alpha=" << alpha;
    prev = b;
  }
}

TEST(Stats, LowerBoundRejectsBadArguments) {
  EXPECT_THROW(binom_lower_bound(1, 0, 0.05), std::domain_error);
  EXPECT_THROW(binom_lower_bound(-1, 10, 0.05), std::domain_error);
  EXPECT_THROW(binom_lower_bound(11, 10, 0.05), std::domain_error);
  EXPECT_THROW(binom_lower_bound(5, 10, 0.0), std::domain_error);
  EXPECT_THROW(binom_lower_bound(5, 10, 1.0), std::domain_error);
}

TEST(Stats, LowerBoundCoversTruthAtNominalRate) {
  // Light simulation; the heavy 10k-rep check lives in the acceptance suite.
  const int64_t n = 50;
  const double p = 0.6, alpha = 0.05;
  const int reps = 2000;
  int violations = 0;
  for (int r = 0; r < reps; ++r) {
    Rng rng = Rng::substream(1234, 5, uint64_t(r));
    int64_t x = 0;
    for (int64_t i = 0; i < n; ++i) x += rng.uniform() < p ? 1 : 0;
    if (binom_lower_bound(x, n, alpha) > p) ++violations;
  }
  double rate = double(violations) / reps;
  EXPECT_LE(rate, alpha + 3.0 * std::sqrt(alpha * (1 - alpha) / reps));
}

TEST(Stats, TwoSidedPValueMatchesEnumeration) {
  for (double p0 : {0.3, 0.5, 0.8}) {
    for (int64_t k = 0; k <= 10; ++k) {
      double lo = 1.0 - double(tail_oracle(k + 1, 10, (long double)p0));
      double hi = double(tail_oracle(k, 10, (long double)p0));
      double want = std::min(1.0, 2.0 * std::min(lo, hi));
      EXPECT_NEAR(binom_two_sided_pvalue(k, 10, p0), want, 1e-12)
          << "k=" << k << " p0=" << p0;
    }
  }
}

TEST(Stats, TwoSidedPValueCapsAtOne) {
  EXPECT_DOUBLE_EQ(binom_two_sided_pvalue(5, 10, 0.5), 1.0);
}

TEST(Stats, TwoSidedPValueRejectsBadArguments) {
  EXPECT_THROW(binom_two_sided_pvalue(-1, 10), std::domain_error);
  EXPECT_THROW(binom_two_sided_pvalue(11, 10), std::domain_error);
  EXPECT_THROW(binom_two_sided_pvalue(1, 0), std::domain_error);
}
