#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "smoothcert/network.hpp"
#include "smoothcert/rng.hpp"
#include "smoothcert/stats.hpp"
#include "smoothcert/tensor.hpp"
#include "smoothcert/util.hpp"

namespace smoothcert {

struct SmoothingConfig {
  double sigma = 0.25;
  int64_t n0 = 100;    // selection samples
  int64_t n = 10000;   // estimation samples
  double alpha = 0.001;
  int mc_batch = 256;  // noise samples per forward batch
  uint64_t seed = 0;

  void validate() const {
    if (!(sigma > 0.0)) throw std::invalid_argument("smoothing: sigma must be > 0");
    if (n0 < 1 || n < 1) throw std::invalid_argument("smoothing: n0 and n must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0))
      throw std::invalid_argument("smoothing: alpha must be inside (0, 1)");
    if (mc_batch < 1) throw std::invalid_argument("smoothing: mc_batch must be >= 1");
  }
};

// Maps a batch of inputs to hard class decisions.
using BaseClassifier = std::function<std::vector<int>(const Tensor&)>;

inline BaseClassifier classifier_of(Network& net) {
  return [&net](const Tensor& batch) { return argmax_classes(net.forward(batch)); };
}

struct CertificationResult {
  std::optional<int> decision;  // empty = abstain
  double p_a_lower = 0.0;
  double radius = 0.0;
  std::vector<int64_t> counts;   // estimation counts per class
  std::vector<int64_t> counts0;  // selection counts per class
  double sigma = 0.0;
  int64_t n0 = 0, n = 0;
  double alpha = 0.0;
};

namespace detail {

// Draws `total` noisy copies of x through the classifier in mc_batch chunks.
// The noise stream is continuous across chunks, so results are independent
// of mc_batch.
inline std::vector<int64_t> noisy_counts(const BaseClassifier& f, int num_classes,
                                         const Tensor& x, double sigma,
                                         int64_t total, int mc_batch, Rng& rng) {
  std::vector<int64_t> counts(size_t(num_classes), 0);
  int64_t d = x.size();
  std::vector<int> bshape;
  bshape.push_back(0);
  for (int s : x.shape()) bshape.push_back(s);
  int64_t done = 0;
  while (done < total) {
    int b = int(std::min<int64_t>(mc_batch, total - done));
    bshape[0] = b;
    Tensor batch(bshape);
    for (int i = 0; i < b; ++i) {
      double* p = batch.data() + int64_t(i) * d;
      const double* xd = x.data();
      for (int64_t j = 0; j < d; ++j) p[j] = xd[j] + sigma * rng.normal();
    }
    std::vector<int> cls = f(batch);
    for (int c : cls) {
      if (c < 0 || c >= num_classes)
        throw std::out_of_range("smoothing: classifier returned a bad class");
      ++counts[size_t(c)];
    }
    done += b;
  }
  return counts;
}

inline int argmax_count(const std::vector<int64_t>& counts) {
  int best = 0;
  for (int c = 1; c < int(counts.size()); ++c)
    if (counts[size_t(c)] > counts[size_t(best)]) best = c;  // ties: lowest id
  return best;
}

}  // namespace detail

// Two-stage certification: n0 selection draws pick the candidate class, n
// fresh draws give a one-sided Clopper-Pearson lower bound p on its
// probability; p > 1/2 certifies l2 radius sigma * PhiInv(p), else abstain.
inline CertificationResult certify(const BaseClassifier& f, int num_classes,
                                   const Tensor& x, const SmoothingConfig& cfg,
                                   uint64_t example_index = 0) {
  cfg.validate();
  if (num_classes < 2)
    throw std::invalid_argument("certify: need at least two classes");
  Rng rng = Rng::substream(cfg.seed, 1, example_index);
  CertificationResult res;
  res.sigma = cfg.sigma;
  res.n0 = cfg.n0;
  res.n = cfg.n;
  res.alpha = cfg.alpha;
  res.counts0 = detail::noisy_counts(f, num_classes, x, cfg.sigma, cfg.n0,
                                     cfg.mc_batch, rng);
  int cand = detail::argmax_count(res.counts0);
  res.counts = detail::noisy_counts(f, num_classes, x, cfg.sigma, cfg.n,
                                    cfg.mc_batch, rng);
  res.p_a_lower = binom_lower_bound(res.counts[size_t(cand)], cfg.n, cfg.alpha);
  if (res.p_a_lower > 0.5) {
    res.decision = cand;
    res.radius = cfg.sigma * phi_inv(res.p_a_lower);
  }
  return res;
}

// Prediction without a radius: n0 draws, exact two-sided binomial test that
// the top class beats the runner-up; abstains unless p-value <= alpha.
inline std::optional<int> smoothed_predict(const BaseClassifier& f, int num_classes,
                                           const Tensor& x, const SmoothingConfig& cfg,
                                           uint64_t example_index = 0) {
  cfg.validate();
  if (num_classes < 2)
    throw std::invalid_argument("smoothed_predict: need at least two classes");
  Rng rng = Rng::substream(cfg.seed, 2, example_index);
  std::vector<int64_t> counts = detail::noisy_counts(f, num_classes, x, cfg.sigma,
                                                     cfg.n0, cfg.mc_batch, rng);
  int top = detail::argmax_count(counts);
  int64_t na = counts[size_t(top)];
  int64_t nb = 0;
  for (int c = 0; c < num_classes; ++c)
    if (c != top) nb = std::max(nb, counts[size_t(c)]);
  if (na + nb == 0) return std::nullopt;
  double pval = binom_two_sided_pvalue(na, na + nb, 0.5);
  if (pval <= cfg.alpha) return top;
  return std::nullopt;
}

inline CertificationResult certify(Network& net, const Tensor& x,
                                   const SmoothingConfig& cfg,
                                   uint64_t example_index = 0) {
  return certify(classifier_of(net), net.num_classes(), x, cfg, example_index);
}

inline std::optional<int> smoothed_predict(Network& net, const Tensor& x,
                                           const SmoothingConfig& cfg,
                                           uint64_t example_index = 0) {
  return smoothed_predict(classifier_of(net), net.num_classes(), x, cfg,
                          example_index);
}

// Adapt-then-freeze protocol: re-estimate BN stats once on the test batch
// perturbed with the same Gaussian noise used for certification, freeze the
// blended stats, then certify every example against the fixed network. With
// exclude_self, example i is certified under stats adapted on the batch
// without row i (costlier; default keeps the example in its own batch).
inline std::vector<CertificationResult> adapt_then_certify(
    Network& net, const Tensor& batch, double rho, const SmoothingConfig& cfg,
    BlendMode blend = BlendMode::StdDev, bool exclude_self = false) {
  cfg.validate();
  if (batch.ndim() != 4) throw ShapeError("adapt_then_certify: expects [N,C,H,W]");
  int N = batch.dim(0);
  int64_t d = batch.size() / N;
  Tensor noisy = Network::deep_copy(batch);
  for (int i = 0; i < N; ++i) {
    Rng rng = Rng::substream(cfg.seed, 3, uint64_t(i));
    double* p = noisy.data() + int64_t(i) * d;
    for (int64_t j = 0; j < d; ++j) p[j] += cfg.sigma * rng.normal();
  }
  std::vector<int> shape = batch.shape();
  auto extract = [&](const Tensor& src, int row) {
    Tensor out({shape[1], shape[2], shape[3]});
    std::copy(src.data() + int64_t(row) * d, src.data() + int64_t(row + 1) * d,
              out.data());
    return out;
  };
  std::vector<CertificationResult> out(static_cast<size_t>(N));
  if (!exclude_self) {
    net.adapt(noisy, rho, blend);
    parallel_for(N, [&](int64_t i) {
      out[size_t(i)] = certify(net, extract(batch, int(i)), cfg, uint64_t(i));
    });
    return out;
  }
  for (int i = 0; i < N; ++i) {
    std::vector<int> keep;
    for (int j = 0; j < N; ++j)
      if (j != i) keep.push_back(j);
    Tensor rest({int(keep.size()), shape[1], shape[2], shape[3]});
    for (size_t k = 0; k < keep.size(); ++k)
      std::copy(noisy.data() + int64_t(keep[k]) * d,
                noisy.data() + int64_t(keep[k] + 1) * d,
                rest.data() + int64_t(k) * d);
    net.adapt(rest, rho, blend);
    out[size_t(i)] = certify(net, extract(batch, i), cfg, uint64_t(i));
  }
  return out;
}

struct CurvePoint {
  double radius = 0.0;
  double accuracy = 0.0;
};

// Fraction of examples whose decision matches the label with certified
// radius >= r, for each requested r. Non-increasing in r.
inline std::vector<CurvePoint> certified_accuracy_curve(
    const std::vector<CertificationResult>& results, const std::vector<int>& labels,
    const std::vector<double>& radii) {
  if (results.size() != labels.size())
    throw std::invalid_argument("certified_accuracy_curve: size mismatch");
  std::vector<CurvePoint> out;
  for (double r : radii) {
    int64_t hits = 0;
    for (size_t i = 0; i < results.size(); ++i) {
      const CertificationResult& c = results[i];
      if (c.decision && *c.decision == labels[i] && c.radius >= r) ++hits;
    }
    out.push_back({r, results.empty() ? 0.0 : double(hits) / double(results.size())});
  }
  return out;
}

// An l2 ball of radius r2 contains the linf ball of radius r2/sqrt(d).
inline double linf_radius_from_l2(double r2, int64_t d) {
  if (d < 1) throw std::invalid_argument("linf_radius_from_l2: d must be >= 1");
  return r2 / std::sqrt(double(d));
}

inline void write_certification_jsonl(const std::string& path,
                                      const std::vector<CertificationResult>& results,
                                      const std::vector<int>& labels) {
  if (results.size() != labels.size())
    throw std::invalid_argument("write_certification_jsonl: size mismatch");
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_certification_jsonl: cannot open '" + path + "'");
  for (size_t i = 0; i < results.size(); ++i) {
    const CertificationResult& c = results[i];
    nlohmann::json j;
    j["index"] = i;
    j["label"] = labels[i];
    if (c.decision)
      j["decision"] = *c.decision;
    else
      j["decision"] = "ABSTAIN";
    j["p_a_lower"] = c.p_a_lower;
    j["radius"] = c.radius;
    j["sigma"] = c.sigma;
    j["n"] = c.n;
    j["n0"] = c.n0;
    j["alpha"] = c.alpha;
    f << j.dump() << "\n";
  }
}

inline void write_curve_csv(const std::string& path,
                            const std::vector<CurvePoint>& curve) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_curve_csv: cannot open '" + path + "'");
  f << "radius,certified_accuracy\n";
  for (const CurvePoint& p : curve)
    f << fmt_double(p.radius) << "," << fmt_double(p.accuracy) << "\n";
}

}  // namespace smoothcert
