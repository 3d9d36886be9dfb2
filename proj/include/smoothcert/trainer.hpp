#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "smoothcert/attacks.hpp"
#include "smoothcert/data_io.hpp"
#include "smoothcert/network.hpp"
#include "smoothcert/rng.hpp"

namespace smoothcert {

enum class Regime { Clean, GaussianAug, Adversarial };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::Clean: return "clean";
    case Regime::GaussianAug: return "gaussian_aug";
    default: return "adversarial";
  }
}

struct TrainDivergence : std::runtime_error {
  int epoch;
  TrainDivergence(int e, const std::string& m)
      : std::runtime_error("training diverged at epoch " + std::to_string(e) +
                           ": " + m),
        epoch(e) {}
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 32;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::vector<double> decay_at = {0.5, 0.75};  // fractions of total epochs
  double decay_factor = 0.1;
  double val_fraction = 0.2;
  Regime regime = Regime::Clean;
  double gauss_sigma = 0.0;       // GaussianAug noise scale
  ThreatModel threat;             // Adversarial regime
  AttackConfig attack;            // training attack (also used for robust val)
  BnMode attack_bn_mode = BnMode::Train;  // BN mode while crafting train attacks
  bool early_stop = true;         // best = checkpoint with top val metric
  uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_metric = 0.0;  // regime-matched validation accuracy
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  int best_epoch = -1;
  double best_val_metric = 0.0;
  int64_t param_count = 0;
  std::string regime;
};

struct TrainOutcome {
  Network best;
  Network last;
  TrainReport report;
};

namespace detail {

inline Tensor add_gaussian(const Tensor& x, double sigma, uint64_t seed,
                           uint64_t tag, const std::vector<int>& stream_ids) {
  Tensor out = Network::deep_copy(x);
  if (sigma <= 0.0) return out;
  int N = x.dim(0);
  int64_t d = x.size() / N;
  for (int i = 0; i < N; ++i) {
    Rng rng = Rng::substream(seed, tag, uint64_t(stream_ids[size_t(i)]));
    double* p = out.data() + int64_t(i) * d;
    for (int64_t j = 0; j < d; ++j) p[j] += sigma * rng.normal();
  }
  return out;
}

inline double accuracy_of(const std::vector<int>& pred, const std::vector<int>& y) {
  int64_t hits = 0;
  for (size_t i = 0; i < y.size(); ++i) hits += pred[i] == y[i];
  return double(hits) / double(y.size());
}

}  // namespace detail

// Plain accuracy evaluation with optional Gaussian test noise and optional
// test-time BN adaptation (rho >= 0 re-adapts on every noisy batch, then
// predicts that batch in Adaptive mode; rho < 0 keeps running stats frozen).
struct EvalOptions {
  double sigma = 0.0;
  double rho = -1.0;
  int batch_size = 128;
  uint64_t seed = 0;
  BlendMode blend = BlendMode::StdDev;
  bool shuffle = true;
};

inline double evaluate(Network& net, const Dataset& ds, const EvalOptions& opt) {
  if (ds.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  auto groups = batches(ds.size(), opt.batch_size, opt.seed, opt.shuffle);
  int64_t hits = 0;
  for (const auto& idx : groups) {
    auto [xb, yb] = gather_batch(ds, idx);
    Tensor noisy = detail::add_gaussian(xb, opt.sigma, opt.seed, 47, idx);
    if (opt.rho >= 0.0) {
      net.adapt(noisy, opt.rho, opt.blend);
    } else {
      net.set_mode(BnMode::Frozen);
    }
    std::vector<int> pred = argmax_classes(net.forward(noisy));
    for (size_t i = 0; i < idx.size(); ++i) hits += pred[i] == yb[i];
  }
  return double(hits) / double(ds.size());
}

// SGD with momentum, stepwise lr decay and L2 weight decay. The regime
// decides what the model sees each batch: clean images, Gaussian-noised
// images, or PGD examples crafted on the spot (BN in cfg.attack_bn_mode while
// crafting). Validation accuracy is measured under the same regime (PGD with
// the training attack hyper-parameters for Adversarial); `best` is the
// checkpoint with the top validation metric, `last` the final epoch.
inline TrainOutcome train(const Network& init, const Dataset& data,
                          const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw std::invalid_argument("train: epochs must be >= 1");
  if (cfg.batch_size < 2)
    throw std::invalid_argument("train: batch_size must be >= 2 for batchnorm");
  DataSplits splits = split_dataset(data, cfg.val_fraction, 0.0, cfg.seed);
  const Dataset& tr = splits.train;
  const Dataset& va = splits.val;
  if (tr.size() == 0) throw std::invalid_argument("train: empty training split");

  Network net = init.clone();
  TrainReport report;
  report.param_count = net.param_count();
  report.regime = regime_name(cfg.regime);

  std::map<std::string, std::vector<double>> velocity;
  for (auto& p : net.params())
    velocity[p.name].assign(size_t(p.value->size()), 0.0);

  std::vector<int> decay_epochs;
  for (double f : cfg.decay_at)
    decay_epochs.push_back(int(std::floor(f * cfg.epochs)));

  auto val_metric = [&](Network& m) -> double {
    if (va.size() == 0) return 0.0;
    m.set_mode(BnMode::Frozen);
    switch (cfg.regime) {
      case Regime::Clean: {
        EvalOptions opt;
        opt.shuffle = false;
        return evaluate(m, va, opt);
      }
      case Regime::GaussianAug: {
        EvalOptions opt;
        opt.sigma = cfg.gauss_sigma;
        opt.seed = hash64(cfg.seed, 3);
        opt.shuffle = false;
        return evaluate(m, va, opt);
      }
      default: {
        int64_t hits = 0;
        auto groups = batches(va.size(), cfg.batch_size, 0, false);
        for (const auto& idx : groups) {
          auto [xb, yb] = gather_batch(va, idx);
          AttackConfig acfg = cfg.attack;
          acfg.seed = hash64(cfg.seed, 5, uint64_t(idx[0]));
          AttackResult atk = pgd(m, xb, yb, cfg.threat, acfg);
          std::vector<int> pred = argmax_classes(m.forward(atk.x_adv));
          for (size_t i = 0; i < idx.size(); ++i) hits += pred[i] == yb[i];
        }
        return double(hits) / double(va.size());
      }
    }
  };

  Network best = net.clone();
  int64_t seen_params = report.param_count;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.lr;
    for (int de : decay_epochs)
      if (epoch >= de) lr *= cfg.decay_factor;

    double loss_sum = 0.0;
    int64_t hit_sum = 0, seen = 0;
    auto groups = batches(tr.size(), cfg.batch_size, hash64(cfg.seed, 7, uint64_t(epoch)), true);
    for (size_t b = 0; b < groups.size(); ++b) {
      const auto& idx = groups[b];
      if (int(idx.size()) < 2) continue;  // batchnorm needs two samples
      auto [xb, yb] = gather_batch(tr, idx);
      Tensor input = xb;
      try {
        switch (cfg.regime) {
          case Regime::Clean:
            break;
          case Regime::GaussianAug: {
            std::vector<int> ids;
            for (int i : idx) ids.push_back(epoch * int(tr.size()) + i);
            input = detail::add_gaussian(xb, cfg.gauss_sigma, cfg.seed, 41, ids);
            break;
          }
          case Regime::Adversarial: {
            if (cfg.threat.epsilon > 0.0) {
              net.set_mode(cfg.attack_bn_mode);
              AttackConfig acfg = cfg.attack;
              acfg.seed = hash64(cfg.seed, 9, uint64_t(epoch) << 20 | uint64_t(b));
              input = pgd(net, xb, yb, cfg.threat, acfg).x_adv;
            }
            break;
          }
        }
        net.set_mode(BnMode::Train);
        Graph g;
        ParamBinding bind(net, g);
        Tensor logits = net.forward(input, &g);
        Tensor loss = cross_entropy(logits, yb);
        g.backward(loss);
        loss_sum += loss.value() * double(idx.size());
        std::vector<int> pred = argmax_classes(logits);
        for (size_t i = 0; i < idx.size(); ++i) hit_sum += pred[i] == yb[i];
        seen += int64_t(idx.size());
        for (auto& p : net.params()) {
          if (!g.has_grad(p.value->node())) continue;
          const std::vector<double>& grad = g.grad_ref(*p.value);
          std::vector<double>& vel = velocity[p.name];
          double* w = p.value->data();
          for (int64_t i = 0; i < p.value->size(); ++i) {
            vel[size_t(i)] = cfg.momentum * vel[size_t(i)] + grad[size_t(i)] +
                             cfg.weight_decay * w[i];
            w[i] -= lr * vel[size_t(i)];
          }
        }
      } catch (const NonFiniteError& e) {
        throw TrainDivergence(epoch, e.what());
      }
      if (net.param_count() != seen_params)
        throw NetworkError("train: parameter count changed during training");
    }

    EpochStats es;
    es.epoch = epoch;
    es.lr = lr;
    es.train_loss = seen ? loss_sum / double(seen) : 0.0;
    es.train_acc = seen ? double(hit_sum) / double(seen) : 0.0;
    es.val_metric = val_metric(net);
    net.set_mode(BnMode::Train);
    report.epochs.push_back(es);

    bool is_best = report.best_epoch < 0 || es.val_metric > report.best_val_metric;
    if (!cfg.early_stop || is_best) {
      report.best_epoch = epoch;
      report.best_val_metric = es.val_metric;
      if (cfg.early_stop) best = net.clone();
    }
  }

  net.set_mode(BnMode::Frozen);
  if (!cfg.early_stop) best = net.clone();
  best.set_mode(BnMode::Frozen);
  return TrainOutcome{std::move(best), std::move(net), std::move(report)};
}

}  // namespace smoothcert
