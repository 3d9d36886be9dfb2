#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "smoothcert/network.hpp"
#include "smoothcert/rng.hpp"
#include "smoothcert/smoothing.hpp"
#include "smoothcert/stats.hpp"

using namespace smoothcert;

namespace {

std::string tmp_path(const std::string& name) {
  return testing::TempDir() + "smoothing_" + name;
}

// Decides by the sign of the first coordinate of each row.
BaseClassifier first_coord_sign() {
  return [](const Tensor& batch) {
    int b = batch.dim(0);
    int64_t d = batch.size() / b;
    std::vector<int> out(static_cast<size_t>(b));
    for (int i = 0; i < b; ++i)
      out[size_t(i)] = batch.data()[int64_t(i) * d] >= 0.0 ? 0 : 1;
    return out;
  };
}

BaseClassifier constant_class(int c) {
  return [c](const Tensor& batch) {
    return std::vector<int>(size_t(batch.dim(0)), c);
  };
}

// Cycles 0,1,0,1,... across all draws regardless of batching.
BaseClassifier alternating(std::shared_ptr<int64_t> counter) {
  return [counter](const Tensor& batch) {
    std::vector<int> out(size_t(batch.dim(0)));
    for (auto& c : out) c = int((*counter)++ % 2);
    return out;
  };
}

Network warmed_cnn(uint64_t seed) {
  Network net = Network::reference_cnn(2, seed, 3, 8);
  Rng rng = Rng::substream(seed, 90);
  Tensor warm({8, 3, 8, 8});
  for (int64_t i = 0; i < warm.size(); ++i) warm.data()[i] = rng.uniform();
  net.set_mode(BnMode::Train);
  net.forward(warm);
  net.set_mode(BnMode::Frozen);
  return net;
}

}  // namespace

TEST(Smoothing, LinearClassifierRadiusNearAnalyticTruth) {
  // For f(x) = [x0 >= 0] under N(x, sigma^2 I), p_A = Phi(x0 / sigma): the
  // smoothed radius at x0 = 0.2, sigma = 0.5 is exactly 0.2.
  Tensor x({4}, {0.2, -0.7, 0.3, 0.0});
  SmoothingConfig cfg;
  cfg.sigma = 0.5;
  cfg.n0 = 200;
  cfg.n = 10000;
  cfg.alpha = 0.001;
  cfg.seed = 77;
  CertificationResult res = certify(first_coord_sign(), 2, x, cfg, 0);
  ASSERT_TRUE(res.decision.has_value());
  EXPECT_EQ(*res.decision, 0);
  EXPECT_GT(res.radius, 0.14);
  EXPECT_LT(res.radius, 0.205);  // estimated radius should not exceed truth by much
  EXPECT_DOUBLE_EQ(res.radius, cfg.sigma * phi_inv(res.p_a_lower));
  EXPECT_LT(res.p_a_lower, double(res.counts[0]) / double(cfg.n));
  int64_t sum0 = res.counts0[0] + res.counts0[1];
  int64_t sum = res.counts[0] + res.counts[1];
  EXPECT_EQ(sum0, cfg.n0);
  EXPECT_EQ(sum, cfg.n);
  EXPECT_EQ(res.sigma, 0.5);
  EXPECT_EQ(res.alpha, 0.001);
}

TEST(Smoothing, ConstantClassifierUsesFullCountBound) {
  Tensor x({3}, {0.1, 0.2, 0.3});
  SmoothingConfig cfg;
  cfg.sigma = 0.25;
  cfg.n0 = 40;
  cfg.n = 400;
  cfg.alpha = 0.05;
  CertificationResult res = certify(constant_class(2), 3, x, cfg, 5);
  ASSERT_TRUE(res.decision.has_value());
  EXPECT_EQ(*res.decision, 2);
  EXPECT_EQ(res.counts[2], 400);
  EXPECT_EQ(res.counts[0] + res.counts[1], 0);
  double p = binom_lower_bound(400, 400, 0.05);
  EXPECT_DOUBLE_EQ(res.p_a_lower, p);
  EXPECT_NEAR(res.p_a_lower, std::pow(0.05, 1.0 / 400.0), 1e-9);
  EXPECT_DOUBLE_EQ(res.radius, 0.25 * phi_inv(p));
}

TEST(Smoothing, EvenlySplitVotesAbstain) {
  Tensor x({2}, {0.0, 0.0});
  SmoothingConfig cfg;
  cfg.n0 = 100;
  cfg.n = 1000;
  cfg.alpha = 0.01;
  auto counter = std::make_shared<int64_t>(0);
  CertificationResult res = certify(alternating(counter), 2, x, cfg, 0);
  EXPECT_FALSE(res.decision.has_value());
  EXPECT_EQ(res.radius, 0.0);
  EXPECT_EQ(res.counts[0], 500);
  EXPECT_EQ(res.counts[1], 500);
  EXPECT_LT(res.p_a_lower, 0.5);
}

TEST(Smoothing, ChunkSizeDoesNotChangeDraws) {
  Tensor x({4}, {0.05, -0.2, 0.4, 0.1});
  SmoothingConfig base;
  base.sigma = 0.6;
  base.n0 = 64;
  base.n = 700;
  base.alpha = 0.01;
  base.seed = 9;
  std::vector<int> sizes = {1, 64, 100, 4096};
  CertificationResult ref;
  for (size_t k = 0; k < sizes.size(); ++k) {
    SmoothingConfig cfg = base;
    cfg.mc_batch = sizes[k];
    CertificationResult res = certify(first_coord_sign(), 2, x, cfg, 3);
    if (k == 0) {
      ref = res;
      continue;
    }
    EXPECT_EQ(res.counts0, ref.counts0) << "mc_batch=" << sizes[k];
    EXPECT_EQ(res.counts, ref.counts) << "mc_batch=" << sizes[k];
    EXPECT_EQ(res.radius, ref.radius) << "mc_batch=" << sizes[k];
  }
}

TEST(Smoothing, SeedAndExampleIndexSelectNoiseStreams) {
  Tensor x({3}, {0.02, 0.5, -0.5});
  SmoothingConfig cfg;
  cfg.sigma = 1.0;
  cfg.n0 = 50;
  cfg.n = 500;
  cfg.seed = 4;
  CertificationResult a = certify(first_coord_sign(), 2, x, cfg, 0);
  CertificationResult b = certify(first_coord_sign(), 2, x, cfg, 0);
  CertificationResult c = certify(first_coord_sign(), 2, x, cfg, 1);
  cfg.seed = 5;
  CertificationResult d = certify(first_coord_sign(), 2, x, cfg, 0);
  EXPECT_EQ(a.counts, b.counts);
  EXPECT_EQ(a.counts0, b.counts0);
  EXPECT_NE(a.counts, c.counts);
  EXPECT_NE(a.counts, d.counts);
}

TEST(Smoothing, ValidationAndBadClassifier) {
  Tensor x({2}, {0.0, 0.0});
  SmoothingConfig cfg;
  cfg.sigma = 0.0;
  EXPECT_THROW(certify(constant_class(0), 2, x, cfg, 0), std::invalid_argument);
  cfg = SmoothingConfig{};
  cfg.alpha = 1.0;
  EXPECT_THROW(certify(constant_class(0), 2, x, cfg, 0), std::invalid_argument);
  cfg = SmoothingConfig{};
  cfg.n = 0;
  EXPECT_THROW(certify(constant_class(0), 2, x, cfg, 0), std::invalid_argument);
  cfg = SmoothingConfig{};
  cfg.mc_batch = 0;
  EXPECT_THROW(certify(constant_class(0), 2, x, cfg, 0), std::invalid_argument);
  cfg = SmoothingConfig{};
  EXPECT_THROW(certify(constant_class(0), 1, x, cfg, 0), std::invalid_argument);
  EXPECT_THROW(certify(constant_class(7), 2, x, cfg, 0), std::out_of_range);
}

TEST(Smoothing, PredictRunsExactBinomialTest) {
  Tensor x({2}, {0.0, 0.0});
  SmoothingConfig cfg;
  cfg.n0 = 60;
  cfg.alpha = 0.01;
  auto sure = smoothed_predict(constant_class(1), 3, x, cfg, 0);
  ASSERT_TRUE(sure.has_value());
  EXPECT_EQ(*sure, 1);

  auto counter = std::make_shared<int64_t>(0);
  cfg.n0 = 100;
  auto torn = smoothed_predict(alternating(counter), 2, x, cfg, 0);
  EXPECT_FALSE(torn.has_value());

  cfg.n0 = 0;
  EXPECT_THROW(smoothed_predict(constant_class(0), 2, x, cfg, 0),
               std::invalid_argument);
}

TEST(Smoothing, AdaptThenCertifyMatchesManualProtocol) {
  Network net = warmed_cnn(11);
  Rng fill = Rng::substream(11, 92);
  Tensor batch({4, 3, 8, 8});
  for (int64_t i = 0; i < batch.size(); ++i) batch.data()[i] = fill.uniform();
  SmoothingConfig cfg;
  cfg.sigma = 0.3;
  cfg.n0 = 16;
  cfg.n = 48;
  cfg.alpha = 0.05;
  cfg.mc_batch = 16;
  cfg.seed = 21;
  double rho = 0.7;

  Network lib = net.clone();
  std::vector<CertificationResult> got = adapt_then_certify(lib, batch, rho, cfg);
  ASSERT_EQ(got.size(), 4u);
  EXPECT_EQ(lib.mode(), BnMode::Adaptive);

  // Manual replication of the protocol.
  Network man = net.clone();
  Tensor noisy = Network::deep_copy(batch);
  int64_t d = batch.size() / batch.dim(0);
  for (int i = 0; i < 4; ++i) {
    Rng nrng = Rng::substream(cfg.seed, 3, uint64_t(i));
    for (int64_t j = 0; j < d; ++j)
      noisy.data()[int64_t(i) * d + j] += cfg.sigma * nrng.normal();
  }
  man.adapt(noisy, rho, BlendMode::StdDev);
  for (int i = 0; i < 4; ++i) {
    Tensor row({3, 8, 8});
    std::copy(batch.data() + i * d, batch.data() + (i + 1) * d, row.data());
    CertificationResult want = certify(man, row, cfg, uint64_t(i));
    EXPECT_EQ(got[size_t(i)].counts, want.counts) << "example " << i;
    EXPECT_EQ(got[size_t(i)].counts0, want.counts0) << "example " << i;
    EXPECT_EQ(got[size_t(i)].radius, want.radius) << "example " << i;
    EXPECT_EQ(got[size_t(i)].decision.has_value(), want.decision.has_value());
  }
}

TEST(Smoothing, AdaptThenCertifyExcludeSelfDropsOwnRow) {
  Network net = warmed_cnn(13);
  Rng fill = Rng::substream(13, 92);
  Tensor batch({3, 3, 8, 8});
  for (int64_t i = 0; i < batch.size(); ++i) batch.data()[i] = fill.uniform();
  SmoothingConfig cfg;
  cfg.sigma = 0.25;
  cfg.n0 = 12;
  cfg.n = 36;
  cfg.alpha = 0.05;
  cfg.mc_batch = 12;
  cfg.seed = 31;
  double rho = 1.0;

  Network lib = net.clone();
  std::vector<CertificationResult> got =
      adapt_then_certify(lib, batch, rho, cfg, BlendMode::StdDev, true);
  ASSERT_EQ(got.size(), 3u);

  int64_t d = batch.size() / 3;
  Tensor noisy = Network::deep_copy(batch);
  for (int i = 0; i < 3; ++i) {
    Rng nrng = Rng::substream(cfg.seed, 3, uint64_t(i));
    for (int64_t j = 0; j < d; ++j)
      noisy.data()[int64_t(i) * d + j] += cfg.sigma * nrng.normal();
  }
  for (int i = 0; i < 3; ++i) {
    Tensor rest({2, 3, 8, 8});
    int k = 0;
    for (int j = 0; j < 3; ++j) {
      if (j == i) continue;
      std::copy(noisy.data() + j * d, noisy.data() + (j + 1) * d,
                rest.data() + (k++) * d);
    }
    Network man = net.clone();
    man.adapt(rest, rho, BlendMode::StdDev);
    Tensor row({3, 8, 8});
    std::copy(batch.data() + i * d, batch.data() + (i + 1) * d, row.data());
    CertificationResult want = certify(man, row, cfg, uint64_t(i));
    EXPECT_EQ(got[size_t(i)].counts, want.counts) << "example " << i;
    EXPECT_EQ(got[size_t(i)].radius, want.radius) << "example " << i;
  }

  Tensor flat({3, 4});
  EXPECT_THROW(adapt_then_certify(lib, flat, rho, cfg), ShapeError);
}

TEST(Smoothing, CurveHandCaseAndMonotonicity) {
  std::vector<CertificationResult> results(4);
  results[0].decision = 0;
  results[0].radius = 0.5;
  results[1].decision = 1;
  results[1].radius = 0.2;
  // results[2] abstains
  results[3].decision = 0;
  results[3].radius = 0.9;
  std::vector<int> labels = {0, 1, 0, 1};
  std::vector<double> radii = {0.0, 0.2, 0.5, 0.9, 1.0};
  auto curve = certified_accuracy_curve(results, labels, radii);
  ASSERT_EQ(curve.size(), 5u);
  EXPECT_DOUBLE_EQ(curve[0].accuracy, 0.5);
  EXPECT_DOUBLE_EQ(curve[1].accuracy, 0.5);
  EXPECT_DOUBLE_EQ(curve[2].accuracy, 0.25);
  EXPECT_DOUBLE_EQ(curve[3].accuracy, 0.0);
  EXPECT_DOUBLE_EQ(curve[4].accuracy, 0.0);
  EXPECT_DOUBLE_EQ(curve[2].radius, 0.5);

  // Property: non-increasing for any random result set.
  Rng rng(555);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<CertificationResult> rs(20);
    std::vector<int> ls(20);
    for (int i = 0; i < 20; ++i) {
      ls[size_t(i)] = int(rng.uniform_int(3));
      if (rng.uniform() < 0.7) {
        rs[size_t(i)].decision = int(rng.uniform_int(3));
        rs[size_t(i)].radius = rng.uniform(0.0, 2.0);
      }
    }
    std::vector<double> grid;
    for (int g = 0; g <= 10; ++g) grid.push_back(0.2 * g);
    auto c = certified_accuracy_curve(rs, ls, grid);
    for (size_t i = 1; i < c.size(); ++i)
      EXPECT_LE(c[i].accuracy, c[i - 1].accuracy);
  }

  EXPECT_THROW(certified_accuracy_curve(results, {0, 1}, radii),
               std::invalid_argument);
}

TEST(Smoothing, LinfRadiusConversion) {
  EXPECT_DOUBLE_EQ(linf_radius_from_l2(1.0, 4), 0.5);
  EXPECT_DOUBLE_EQ(linf_radius_from_l2(2.0, 1), 2.0);
  EXPECT_DOUBLE_EQ(linf_radius_from_l2(0.75, 3072), 0.75 / std::sqrt(3072.0));
  EXPECT_THROW(linf_radius_from_l2(1.0, 0), std::invalid_argument);
}

TEST(Smoothing, JsonlReportRoundTrips) {
  std::vector<CertificationResult> results(2);
  results[0].decision = 1;
  results[0].p_a_lower = 0.83;
  results[0].radius = 0.4771;
  results[0].sigma = 0.5;
  results[0].n = 1000;
  results[0].n0 = 100;
  results[0].alpha = 0.001;
  results[1].sigma = 0.5;  // abstain row
  std::vector<int> labels = {1, 0};
  std::string path = tmp_path("report.jsonl");
  write_certification_jsonl(path, results, labels);

  std::ifstream f(path);
  ASSERT_TRUE(f.good());
  std::string line;
  ASSERT_TRUE(std::getline(f, line));
  nlohmann::json j0 = nlohmann::json::parse(line);
  EXPECT_EQ(j0["index"], 0);
  EXPECT_EQ(j0["label"], 1);
  EXPECT_EQ(j0["decision"], 1);
  EXPECT_DOUBLE_EQ(j0["radius"].get<double>(), 0.4771);
  EXPECT_DOUBLE_EQ(j0["p_a_lower"].get<double>(), 0.83);
  EXPECT_EQ(j0["n"], 1000);
  ASSERT_TRUE(std::getline(f, line));
  nlohmann::json j1 = nlohmann::json::parse(line);
  EXPECT_EQ(j1["decision"], "ABSTAIN");
  EXPECT_DOUBLE_EQ(j1["radius"].get<double>(), 0.0);
  EXPECT_FALSE(std::getline(f, line));

  EXPECT_THROW(write_certification_jsonl(path, results, {1}),
               std::invalid_argument);
}

TEST(Smoothing, CurveCsvUsesStableNumberFormat) {
  std::vector<CurvePoint> curve = {{0.0, 0.5}, {0.25, 0.25}, {1.5, 0.0}};
  std::string path = tmp_path("curve.csv");
  write_curve_csv(path, curve);
  std::ifstream f(path);
  std::stringstream ss;
  ss << f.rdbuf();
  EXPECT_EQ(ss.str(), "radius,certified_accuracy\n0,0.5\n0.25,0.25\n1.5,0\n");
}
