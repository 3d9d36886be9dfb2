#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "smoothcert/network.hpp"
#include "smoothcert/rng.hpp"
#include "smoothcert/tensor.hpp"

namespace smoothcert {

enum class NormKind { Linf, L2 };

struct AttackError : std::runtime_error {
  explicit AttackError(const std::string& m) : std::runtime_error(m) {}
};

struct ThreatModel {
  NormKind norm = NormKind::Linf;
  double epsilon = 0.0;

  ThreatModel() = default;
  ThreatModel(NormKind n, double eps) : norm(n), epsilon(eps) {
    // epsilon == 0 is the degenerate threat set {0}; the attack is then a
    // no-op, which keeps Adversarial training with eps=0 identical to Clean.
    if (!(eps >= 0.0) || !std::isfinite(eps))
      throw AttackError("threat model: epsilon must be finite and >= 0");
  }
};

struct AttackConfig {
  int steps = 10;
  double step_size = 0.0;  // <= 0 picks eps/4 (Linf) or eps/8.5 (L2)
  bool random_start = true;
  uint64_t seed = 0;
};

inline double resolved_step_size(const ThreatModel& tm, const AttackConfig& cfg) {
  if (cfg.step_size > 0.0) return cfg.step_size;
  return tm.norm == NormKind::Linf ? tm.epsilon / 4.0 : tm.epsilon / 8.5;
}

inline double lp_norm(const double* v, int64_t n, NormKind norm) {
  if (norm == NormKind::Linf) {
    double m = 0.0;
    for (int64_t i = 0; i < n; ++i) m = std::max(m, std::fabs(v[i]));
    return m;
  }
  double s = 0.0;
  for (int64_t i = 0; i < n; ++i) s += v[i] * v[i];
  return std::sqrt(s);
}

inline double lp_norm(const Tensor& t, NormKind norm) {
  return lp_norm(t.data(), t.size(), norm);
}

namespace detail {

// Steepest-ascent direction: sign(g) for Linf, g/||g||2 for L2 (zero gradient
// maps to zero, making the step a no-op).
inline void q_p_inplace(const double* g, double* out, int64_t n, NormKind norm) {
  if (norm == NormKind::Linf) {
    for (int64_t i = 0; i < n; ++i)
      out[i] = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
    return;
  }
  double nv = lp_norm(g, n, NormKind::L2);
  if (nv == 0.0) {
    for (int64_t i = 0; i < n; ++i) out[i] = 0.0;
    return;
  }
  for (int64_t i = 0; i < n; ++i) out[i] = g[i] / nv;
}

inline void project_inplace(double* d, int64_t n, const ThreatModel& tm) {
  if (tm.norm == NormKind::Linf) {
    for (int64_t i = 0; i < n; ++i)
      d[i] = d[i] > tm.epsilon ? tm.epsilon : (d[i] < -tm.epsilon ? -tm.epsilon : d[i]);
    return;
  }
  double nv = lp_norm(d, n, NormKind::L2);
  if (nv > tm.epsilon) {
    double s = tm.epsilon / nv;
    for (int64_t i = 0; i < n; ++i) d[i] *= s;
  }
}

// Uniform draw from the threat set.
inline void sample_in_ball(Rng& rng, double* d, int64_t n, const ThreatModel& tm) {
  if (tm.norm == NormKind::Linf) {
    for (int64_t i = 0; i < n; ++i) d[i] = rng.uniform(-tm.epsilon, tm.epsilon);
    return;
  }
  double nrm2 = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    d[i] = rng.normal();
    nrm2 += d[i] * d[i];
  }
  double nrm = std::sqrt(nrm2);
  if (nrm == 0.0) return;
  double r = tm.epsilon * std::pow(rng.uniform_pos(), 1.0 / double(n));
  for (int64_t i = 0; i < n; ++i) d[i] *= r / nrm;
}

}  // namespace detail

inline Tensor q_p(const Tensor& g, NormKind norm) {
  Tensor out(g.shape());
  detail::q_p_inplace(g.data(), out.data(), g.size(), norm);
  return out;
}

inline Tensor project(const Tensor& delta, const ThreatModel& tm) {
  Tensor out(delta.shape(), std::vector<double>(delta.data(), delta.data() + delta.size()));
  detail::project_inplace(out.data(), out.size(), tm);
  return out;
}

struct AttackResult {
  Tensor x_adv;
  std::vector<double> loss_clean;  // EoT loss at the unperturbed input
  std::vector<double> loss_adv;    // EoT loss at the returned input
};

namespace detail {

// Per-example EoT losses -log( (1/m) sum_i softmax(f_i(x))_y ), no tracking.
inline std::vector<double> eot_losses(const std::vector<Network*>& models,
                                      const Tensor& x, const std::vector<int>& y) {
  int N = x.dim(0);
  std::vector<double> pbar(size_t(N), 0.0);
  for (Network* net : models) {
    Tensor probs = softmax(net->forward(x));
    Tensor py = gather_classes(probs, y);
    for (int i = 0; i < N; ++i) pbar[size_t(i)] += py.data()[i];
  }
  std::vector<double> out(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i)
    out[size_t(i)] = -std::log(pbar[size_t(i)] / double(models.size()));
  return out;
}

}  // namespace detail

// Projected gradient ascent on the expectation-over-transformation loss
//   -log E_i[ softmax(f_i(x + delta))_y ]
// (the log sits outside the model average). Each step moves by
// eta * q_p(grad), projects onto the threat set, then clips x+delta back to
// [0,1] and re-derives delta, in that order. One model reduces to plain PGD.
inline AttackResult eot_pgd(const std::vector<Network*>& models, const Tensor& x,
                            const std::vector<int>& y, const ThreatModel& tm,
                            const AttackConfig& cfg) {
  if (models.empty()) throw AttackError("eot_pgd: empty model ensemble");
  if (x.ndim() != 4) throw ShapeError("eot_pgd: expects [N,C,H,W] input");
  int N = x.dim(0);
  if (int(y.size()) != N) throw AttackError("eot_pgd: label count mismatch");
  if (cfg.steps < 0) throw AttackError("eot_pgd: negative step count");
  int64_t d = x.size() / N;
  double eta = resolved_step_size(tm, cfg);

  AttackResult res;
  res.loss_clean = detail::eot_losses(models, x, y);

  std::vector<double> delta(size_t(x.size()), 0.0);
  const double* xd = x.data();
  auto clip_and_check = [&](double* dl) {
    for (int i = 0; i < N; ++i) {
      double* di = dl + int64_t(i) * d;
      const double* xi = xd + int64_t(i) * d;
      detail::project_inplace(di, d, tm);
      for (int64_t j = 0; j < d; ++j) {
        double v = xi[j] + di[j];
        v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        di[j] = v - xi[j];
      }
      if (lp_norm(di, d, tm.norm) > tm.epsilon * (1.0 + 1e-12) + 1e-300)
        throw AttackError("eot_pgd: projection left the threat set");
    }
  };

  if (cfg.random_start && tm.epsilon > 0.0) {
    for (int i = 0; i < N; ++i) {
      Rng rng = Rng::substream(cfg.seed, 31, uint64_t(i));
      detail::sample_in_ball(rng, delta.data() + int64_t(i) * d, d, tm);
    }
    clip_and_check(delta.data());
  }

  std::vector<double> dir(static_cast<size_t>(d));
  for (int step = 0; step < cfg.steps; ++step) {
    Graph g;
    std::vector<double> xadv(size_t(x.size()));
    for (int64_t j = 0; j < x.size(); ++j) xadv[size_t(j)] = xd[j] + delta[size_t(j)];
    Tensor dt = g.var(Tensor(x.shape(), std::move(xadv)));
    Tensor psum;
    for (Network* net : models) {
      Tensor probs = softmax(net->forward(dt, &g));
      Tensor py = gather_classes(probs, y);
      psum = psum.empty() ? py : add(psum, py);
    }
    Tensor loss = sum(neg(log(scale(psum, 1.0 / double(models.size())))));
    g.backward(loss);
    const std::vector<double>& grad = g.grad_ref(dt);
    for (int i = 0; i < N; ++i) {
      const double* gi = grad.data() + int64_t(i) * d;
      double* di = delta.data() + int64_t(i) * d;
      detail::q_p_inplace(gi, dir.data(), d, tm.norm);
      for (int64_t j = 0; j < d; ++j) di[j] += eta * dir[size_t(j)];
    }
    clip_and_check(delta.data());
  }

  std::vector<double> out(size_t(x.size()));
  for (int64_t j = 0; j < x.size(); ++j) out[size_t(j)] = xd[j] + delta[size_t(j)];
  res.x_adv = Tensor(x.shape(), std::move(out));
  res.loss_adv = detail::eot_losses(models, res.x_adv, y);
  return res;
}

inline AttackResult pgd(Network& net, const Tensor& x, const std::vector<int>& y,
                        const ThreatModel& tm, const AttackConfig& cfg) {
  std::vector<Network*> single{&net};
  return eot_pgd(single, x, y, tm, cfg);
}

enum class EotPerturb { None, Uniform };

// Builds the attacker's ensemble view of an adaptive-BN defense: m clones of
// the base net, each adapted on its own randomly perturbed copy of the test
// batch (perturbations drawn uniformly inside the threat set, then clipped
// with the image to [0,1]).
inline std::vector<Network> make_eot_ensemble(const Network& base,
                                              const Tensor& test_batch, double rho,
                                              int m, const ThreatModel& tm,
                                              uint64_t seed,
                                              BlendMode blend = BlendMode::StdDev,
                                              EotPerturb perturb = EotPerturb::Uniform) {
  if (m < 1) throw AttackError("make_eot_ensemble: m must be >= 1");
  if (test_batch.ndim() != 4)
    throw ShapeError("make_eot_ensemble: expects [N,C,H,W] batch");
  int N = test_batch.dim(0);
  int64_t d = test_batch.size() / N;
  std::vector<Network> out;
  out.reserve(size_t(m));
  for (int i = 0; i < m; ++i) {
    Tensor batch = Network::deep_copy(test_batch);
    if (perturb == EotPerturb::Uniform && tm.epsilon > 0.0) {
      std::vector<double> dlt(static_cast<size_t>(d));
      for (int ex = 0; ex < N; ++ex) {
        Rng rng = Rng::substream(hash64(seed, uint64_t(i)), 37, uint64_t(ex));
        detail::sample_in_ball(rng, dlt.data(), d, tm);
        double* b = batch.data() + int64_t(ex) * d;
        for (int64_t j = 0; j < d; ++j) {
          double v = b[j] + dlt[size_t(j)];
          b[j] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        }
      }
    }
    Network clone = base.clone();
    clone.adapt(batch, rho, blend);
    out.push_back(std::move(clone));
  }
  return out;
}

}  // namespace smoothcert
