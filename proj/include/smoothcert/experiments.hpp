// Experiment drivers behind the CLI subcommands. Every driver takes a
// resolved config, writes its artifacts into output_dir, and returns the
// report JSON (also written to disk). Report bodies carry the library
// version and the config hash but no absolute paths or timestamps, so two
// runs with the same config produce byte-identical reports.
#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "smoothcert/attacks.hpp"
#include "smoothcert/config.hpp"
#include "smoothcert/corruptions.hpp"
#include "smoothcert/data_io.hpp"
#include "smoothcert/network.hpp"
#include "smoothcert/smoothing.hpp"
#include "smoothcert/trainer.hpp"
#include "smoothcert/version.hpp"

namespace smoothcert {

// ---------------------------------------------------------------------------
// config -> library structs

inline Regime parse_regime(const std::string& s) {
  if (s == "clean") return Regime::Clean;
  if (s == "gaussian_aug") return Regime::GaussianAug;
  if (s == "adversarial") return Regime::Adversarial;
  throw ConfigError("train.regime: expected clean|gaussian_aug|adversarial, got '" + s + "'");
}

inline NormKind parse_norm(const std::string& s) {
  if (s == "linf") return NormKind::Linf;
  if (s == "l2") return NormKind::L2;
  throw ConfigError("attack.norm: expected linf|l2, got '" + s + "'");
}

inline BnMode parse_attack_bn(const std::string& s) {
  if (s == "train") return BnMode::Train;
  if (s == "frozen") return BnMode::Frozen;
  throw ConfigError("train.attack_bn_mode: expected train|frozen, got '" + s + "'");
}

inline BlendMode parse_blend(const std::string& s) {
  if (s == "stddev") return BlendMode::StdDev;
  if (s == "variance") return BlendMode::Variance;
  throw ConfigError("adapt.blend: expected stddev|variance, got '" + s + "'");
}

inline EotPerturb parse_eot_perturb(const std::string& s) {
  if (s == "none") return EotPerturb::None;
  if (s == "uniform") return EotPerturb::Uniform;
  throw ConfigError("attack.eot_perturb: expected none|uniform, got '" + s + "'");
}

inline ThreatModel threat_from(const json& cfg) {
  const json& a = cfg.at("attack");
  return ThreatModel{parse_norm(a.at("norm").get<std::string>()),
                     a.at("epsilon").get<double>()};
}

inline AttackConfig attack_from(const json& cfg) {
  const json& a = cfg.at("attack");
  AttackConfig ac;
  ac.steps = a.at("steps").get<int>();
  ac.step_size = a.at("step_size").get<double>();
  ac.random_start = a.at("random_start").get<bool>();
  ac.seed = hash64(cfg.at("seed").get<uint64_t>(), 21);
  return ac;
}

inline SmoothingConfig smoothing_from(const json& cfg) {
  const json& s = cfg.at("smoothing");
  SmoothingConfig sc;
  sc.sigma = s.at("sigma").get<double>();
  sc.n0 = s.at("n0").get<int64_t>();
  sc.n = s.at("n").get<int64_t>();
  sc.alpha = s.at("alpha").get<double>();
  sc.mc_batch = s.at("mc_batch").get<int64_t>();
  sc.seed = cfg.at("seed").get<uint64_t>();
  return sc;
}

inline TrainConfig train_config_from(const json& cfg) {
  const json& t = cfg.at("train");
  TrainConfig tc;
  tc.epochs = t.at("epochs").get<int>();
  tc.batch_size = t.at("batch_size").get<int>();
  tc.lr = t.at("lr").get<double>();
  tc.momentum = t.at("momentum").get<double>();
  tc.weight_decay = t.at("weight_decay").get<double>();
  tc.decay_at = t.at("decay_at").get<std::vector<double>>();
  tc.decay_factor = t.at("decay_factor").get<double>();
  tc.val_fraction = t.at("val_fraction").get<double>();
  tc.regime = parse_regime(t.at("regime").get<std::string>());
  tc.gauss_sigma = t.at("gauss_sigma").get<double>();
  tc.threat = threat_from(cfg);
  tc.attack = attack_from(cfg);
  tc.attack_bn_mode = parse_attack_bn(t.at("attack_bn_mode").get<std::string>());
  tc.early_stop = t.at("early_stop").get<bool>();
  tc.seed = cfg.at("seed").get<uint64_t>();
  return tc;
}

// ---------------------------------------------------------------------------
// shared plumbing

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  f << text;
}

inline void write_json_file(const std::string& path, const json& j) {
  write_text(path, j.dump(2) + "\n");
}

inline std::string sidecar_of(const std::string& rten_path) {
  const std::string suffix = ".rten";
  if (rten_path.size() > suffix.size() &&
      rten_path.compare(rten_path.size() - suffix.size(), suffix.size(), suffix) == 0)
    return rten_path.substr(0, rten_path.size() - suffix.size()) + ".json";
  return rten_path + ".json";
}

// Row slice of a [N, ...] tensor.
inline Tensor rows_of(const Tensor& x, const std::vector<int>& idx) {
  std::vector<int> shape = x.shape();
  shape[0] = int(idx.size());
  Tensor out(shape);
  int64_t row = x.size() / x.dim(0);
  for (size_t i = 0; i < idx.size(); ++i)
    std::copy(x.data() + int64_t(idx[i]) * row,
              x.data() + int64_t(idx[i] + 1) * row,
              out.data() + int64_t(i) * row);
  return out;
}

}  // namespace detail

inline json base_report(const json& cfg) {
  return json{{"version", kVersion}, {"config_hash", config_hash(cfg)}};
}

struct SplitDataset {
  Dataset pool, train, test;
};

// Loads a dataset written by gen-data (pool plus split index records), or
// synthesizes one from the data section when dataset_path is empty. Files
// without split tags are split on the fly with data.test_fraction.
inline SplitDataset load_or_generate(const json& cfg) {
  const json& d = cfg.at("data");
  SplitDataset out;
  std::string path = d.at("dataset_path").get<std::string>();
  std::vector<int> tr_idx, te_idx;
  if (!path.empty()) {
    out.pool = load_dataset(path);
    bool have_tr = false, have_te = false;
    for (const RtenRecord& r : read_rten(path)) {
      if (r.name == "split.train") {
        tr_idx.assign(r.u32.begin(), r.u32.end());
        have_tr = true;
      } else if (r.name == "split.test") {
        te_idx.assign(r.u32.begin(), r.u32.end());
        have_te = true;
      }
    }
    if (!have_tr || !have_te) {
      SplitIndices si = split_indices(out.pool, 0.0, d.at("test_fraction").get<double>(),
                                      cfg.at("seed").get<uint64_t>());
      tr_idx = si.train;
      te_idx = si.test;
    }
  } else {
    out.pool = gen_synthetic(d.at("classes").get<int>(), d.at("per_class").get<int>(),
                             d.at("hw").get<int>(), cfg.at("seed").get<uint64_t>());
    SplitIndices si = split_indices(out.pool, 0.0, d.at("test_fraction").get<double>(),
                                    cfg.at("seed").get<uint64_t>());
    tr_idx = si.train;
    te_idx = si.test;
  }
  out.train = subset(out.pool, tr_idx);
  out.test = subset(out.pool, te_idx);
  return out;
}

inline Network load_checkpoint(const json& cfg) {
  std::string path = cfg.at("model").at("checkpoint_path").get<std::string>();
  if (path.empty())
    throw ConfigError("model.checkpoint_path is required for this command");
  return Network::load(path, detail::sidecar_of(path));
}

// ---------------------------------------------------------------------------
// gen-data

inline json cmd_gen_data(const json& cfg, const std::string& out) {
  const json& d = cfg.at("data");
  uint64_t seed = cfg.at("seed").get<uint64_t>();
  Dataset pool = gen_synthetic(d.at("classes").get<int>(), d.at("per_class").get<int>(),
                               d.at("hw").get<int>(), seed);
  SplitIndices si =
      split_indices(pool, 0.0, d.at("test_fraction").get<double>(), seed);

  std::vector<uint32_t> labels(pool.labels.begin(), pool.labels.end());
  std::vector<uint32_t> tr(si.train.begin(), si.train.end());
  std::vector<uint32_t> te(si.test.begin(), si.test.end());
  write_rten(out + "/dataset.rten",
             {RtenRecord::tensor("images", pool.images),
              RtenRecord::ints("labels", labels),
              RtenRecord::ints("num_classes", {uint32_t(pool.num_classes)}),
              RtenRecord::ints("seed", {uint32_t(seed & 0xffffffffu),
                                        uint32_t(seed >> 32)}),
              RtenRecord::ints("split.train", tr),
              RtenRecord::ints("split.test", te)});

  json report = base_report(cfg);
  report["seed"] = seed;
  report["classes"] = pool.num_classes;
  report["per_class"] = d.at("per_class").get<int>();
  report["image_hw"] = d.at("hw").get<int>();
  report["n_total"] = pool.size();
  report["n_train"] = int64_t(si.train.size());
  report["n_test"] = int64_t(si.test.size());
  report["dataset_file"] = "dataset.rten";
  detail::write_json_file(out + "/manifest.json", report);
  return report;
}

// ---------------------------------------------------------------------------
// train

inline json cmd_train(const json& cfg, const std::string& out) {
  SplitDataset data = load_or_generate(cfg);
  const json& m = cfg.at("model");
  Network init = Network::reference_cnn(data.pool.num_classes,
                                        m.at("init_seed").get<uint64_t>(), 3,
                                        data.pool.images.dim(2),
                                        m.at("width").get<int>());
  TrainConfig tc = train_config_from(cfg);
  TrainOutcome outcome = train(init, data.train, tc);

  outcome.best.save(out + "/best.rten", out + "/best.json");
  outcome.last.save(out + "/last.rten", out + "/last.json");

  EvalOptions ev;
  ev.seed = tc.seed;
  double test_acc = evaluate(outcome.best, data.test, ev);

  json report = base_report(cfg);
  report["regime"] = outcome.report.regime;
  report["param_count"] = outcome.report.param_count;
  report["best_epoch"] = outcome.report.best_epoch;
  report["best_val_metric"] = outcome.report.best_val_metric;
  report["test_accuracy"] = test_acc;
  report["checkpoints"] = json{{"best", "best.rten"}, {"last", "last.rten"}};
  json epochs = json::array();
  for (const EpochStats& es : outcome.report.epochs)
    epochs.push_back(json{{"epoch", es.epoch},
                          {"lr", es.lr},
                          {"train_loss", es.train_loss},
                          {"train_acc", es.train_acc},
                          {"val_metric", es.val_metric}});
  report["epochs"] = epochs;
  detail::write_json_file(out + "/train_report.json", report);
  return report;
}

// ---------------------------------------------------------------------------
// eval-noise: clean/noisy accuracy with frozen vs adapted BN

inline json cmd_eval_noise(const json& cfg, const std::string& out) {
  SplitDataset data = load_or_generate(cfg);
  Network net = load_checkpoint(cfg);
  double sigma = cfg.at("smoothing").at("sigma").get<double>();
  double rho = cfg.at("adapt").at("rho").get<double>();
  BlendMode blend = parse_blend(cfg.at("adapt").at("blend").get<std::string>());

  EvalOptions ev;
  ev.sigma = sigma;
  ev.batch_size = cfg.at("adapt").at("batch_size").get<int>();
  ev.seed = cfg.at("seed").get<uint64_t>();
  ev.blend = blend;

  ev.rho = -1.0;
  double acc_frozen = evaluate(net, data.test, ev);
  json acc_adapted = nullptr;
  if (rho >= 0.0) {
    ev.rho = rho;
    acc_adapted = evaluate(net, data.test, ev);
  }

  json report = base_report(cfg);
  report["sigma"] = sigma;
  report["rho"] = rho;
  report["n_test"] = data.test.size();
  report["accuracy_frozen"] = acc_frozen;
  report["accuracy_adapted"] = acc_adapted;
  detail::write_json_file(out + "/eval_noise_report.json", report);

  std::string csv = "sigma,rho,accuracy_frozen,accuracy_adapted\n";
  csv += fmt_double(sigma) + "," + fmt_double(rho) + "," + fmt_double(acc_frozen) +
         "," + (acc_adapted.is_null() ? "" : fmt_double(acc_adapted.get<double>())) +
         "\n";
  detail::write_text(out + "/eval_noise.csv", csv);
  return report;
}

// ---------------------------------------------------------------------------
// attack: PGD robust accuracy, frozen defense vs adaptive defense under an
// EoT attacker that models the adaptation

inline json cmd_attack(const json& cfg, const std::string& out) {
  SplitDataset data = load_or_generate(cfg);
  Network net = load_checkpoint(cfg);
  ThreatModel tm = threat_from(cfg);
  AttackConfig ac = attack_from(cfg);
  double rho = cfg.at("adapt").at("rho").get<double>();
  int batch_size = cfg.at("adapt").at("batch_size").get<int>();
  int eot_m = cfg.at("attack").at("eot_m").get<int>();
  BlendMode blend = parse_blend(cfg.at("adapt").at("blend").get<std::string>());
  EotPerturb perturb =
      parse_eot_perturb(cfg.at("attack").at("eot_perturb").get<std::string>());
  if (eot_m < 1) throw ConfigError("attack.eot_m must be >= 1");
  uint64_t seed = cfg.at("seed").get<uint64_t>();

  auto groups = batches(data.test.size(), batch_size, seed, true);
  int64_t n = data.test.size();
  int64_t clean_hits = 0, frozen_hits = 0, adaptive_hits = 0;
  double loss_clean_sum = 0.0, loss_adv_sum = 0.0;
  for (size_t g = 0; g < groups.size(); ++g) {
    auto [xb, yb] = gather_batch(data.test, groups[g]);

    net.set_mode(BnMode::Frozen);
    std::vector<int> pred = argmax_classes(net.forward(xb));
    for (size_t i = 0; i < yb.size(); ++i) clean_hits += pred[i] == yb[i];

    AttackConfig ab = ac;
    ab.seed = hash64(ac.seed, uint64_t(g));
    AttackResult res = pgd(net, xb, yb, tm, ab);
    net.set_mode(BnMode::Frozen);
    pred = argmax_classes(net.forward(res.x_adv));
    for (size_t i = 0; i < yb.size(); ++i) frozen_hits += pred[i] == yb[i];
    for (double v : res.loss_clean) loss_clean_sum += v;
    for (double v : res.loss_adv) loss_adv_sum += v;

    if (rho >= 0.0) {
      std::vector<Network> ensemble = make_eot_ensemble(
          net, xb, rho, eot_m, tm, hash64(seed, uint64_t(g)), blend, perturb);
      std::vector<Network*> ptrs;
      for (Network& e : ensemble) ptrs.push_back(&e);
      AttackResult ares = eot_pgd(ptrs, xb, yb, tm, ab);
      net.adapt(ares.x_adv, rho, blend);
      pred = argmax_classes(net.forward(ares.x_adv));
      for (size_t i = 0; i < yb.size(); ++i) adaptive_hits += pred[i] == yb[i];
    }
  }

  json report = base_report(cfg);
  report["norm"] = cfg.at("attack").at("norm");
  report["epsilon"] = tm.epsilon;
  report["steps"] = ac.steps;
  report["eot_m"] = eot_m;
  report["rho"] = rho;
  report["n_test"] = n;
  report["clean_accuracy"] = double(clean_hits) / double(n);
  report["robust_accuracy_frozen"] = double(frozen_hits) / double(n);
  report["robust_accuracy_adaptive"] =
      rho >= 0.0 ? json(double(adaptive_hits) / double(n)) : json(nullptr);
  report["mean_loss_clean"] = loss_clean_sum / double(n);
  report["mean_loss_adv"] = loss_adv_sum / double(n);
  detail::write_json_file(out + "/attack_report.json", report);

  std::string csv =
      "norm,epsilon,steps,eot_m,rho,clean_accuracy,robust_accuracy_frozen,robust_accuracy_adaptive\n";
  csv += cfg.at("attack").at("norm").get<std::string>() + "," +
         fmt_double(tm.epsilon) + "," + std::to_string(ac.steps) + "," +
         std::to_string(eot_m) + "," + fmt_double(rho) + "," +
         fmt_double(report["clean_accuracy"].get<double>()) + "," +
         fmt_double(report["robust_accuracy_frozen"].get<double>()) + "," +
         (rho >= 0.0 ? fmt_double(report["robust_accuracy_adaptive"].get<double>())
                     : std::string()) +
         "\n";
  detail::write_text(out + "/attack.csv", csv);
  return report;
}

// ---------------------------------------------------------------------------
// certify: randomized-smoothing certification over the test split

inline json cmd_certify(const json& cfg, const std::string& out) {
  SplitDataset data = load_or_generate(cfg);
  Network net = load_checkpoint(cfg);
  SmoothingConfig sc = smoothing_from(cfg);
  const json& s = cfg.at("smoothing");
  double rho = cfg.at("adapt").at("rho").get<double>();
  int batch_size = cfg.at("adapt").at("batch_size").get<int>();
  BlendMode blend = parse_blend(cfg.at("adapt").at("blend").get<std::string>());
  bool exclude_self = s.at("exclude_self").get<bool>();

  int64_t m = std::min<int64_t>(data.test.size(), s.at("max_examples").get<int64_t>());
  if (m < 1) throw ConfigError("certify: no test examples selected");
  std::vector<int> chosen(static_cast<size_t>(m));
  for (int64_t i = 0; i < m; ++i) chosen[size_t(i)] = int(i);
  auto [images, labels] = gather_batch(data.test, chosen);

  std::vector<CertificationResult> results;
  results.reserve(size_t(m));
  if (rho >= 0.0) {
    for (int64_t start = 0; start < m; start += batch_size) {
      int64_t stop = std::min(m, start + batch_size);
      std::vector<int> idx(size_t(stop - start));
      for (int64_t i = start; i < stop; ++i) idx[size_t(i - start)] = int(i);
      Tensor xb = detail::rows_of(images, idx);
      SmoothingConfig sb = sc;
      sb.seed = hash64(sc.seed, uint64_t(start));
      std::vector<CertificationResult> part =
          adapt_then_certify(net, xb, rho, sb, blend, exclude_self);
      for (CertificationResult& r : part) results.push_back(std::move(r));
    }
  } else {
    net.set_mode(BnMode::Frozen);
    int64_t d = images.size() / m;
    for (int64_t i = 0; i < m; ++i) {
      Tensor xi({1, images.dim(1), images.dim(2), images.dim(3)});
      std::copy(images.data() + i * d, images.data() + (i + 1) * d, xi.data());
      results.push_back(certify(net, xi, sc, uint64_t(i)));
    }
  }

  write_certification_jsonl(out + "/certifications.jsonl", results, labels);

  std::vector<double> radii;
  double rmax = s.at("radius_grid_max").get<double>();
  double rstep = s.at("radius_grid_step").get<double>();
  if (rstep <= 0.0 || rmax < 0.0) throw ConfigError("certify: bad radius grid");
  for (double r = 0.0; r <= rmax + 1e-12; r += rstep) radii.push_back(r);
  std::vector<CurvePoint> curve = certified_accuracy_curve(results, labels, radii);
  write_curve_csv(out + "/curve.csv", curve);

  int64_t abstain = 0, correct = 0;
  double radius_sum = 0.0;
  for (size_t i = 0; i < results.size(); ++i) {
    if (!results[i].decision) {
      ++abstain;
    } else if (*results[i].decision == labels[i]) {
      ++correct;
      radius_sum += results[i].radius;
    }
  }
  json report = base_report(cfg);
  report["sigma"] = sc.sigma;
  report["n0"] = sc.n0;
  report["n"] = sc.n;
  report["alpha"] = sc.alpha;
  report["rho"] = rho;
  report["num_examples"] = int64_t(results.size());
  report["abstain_rate"] = double(abstain) / double(results.size());
  report["certified_accuracy_r0"] = double(correct) / double(results.size());
  report["mean_certified_radius"] =
      correct > 0 ? radius_sum / double(correct) : 0.0;
  json jcurve = json::array();
  for (const CurvePoint& p : curve)
    jcurve.push_back(json{{"radius", p.radius}, {"certified_accuracy", p.accuracy}});
  report["curve"] = jcurve;
  report["files"] =
      json{{"per_example", "certifications.jsonl"}, {"curve", "curve.csv"}};
  detail::write_json_file(out + "/certify_report.json", report);
  return report;
}

// ---------------------------------------------------------------------------
// corrupt-eval: corruption error table plus mCE/rmCE against a reference

inline ErrorTable error_table_from_json(const json& j) {
  ErrorTable t;
  t.clean_error = j.at("clean_error").get<double>();
  for (auto it = j.at("errors").begin(); it != j.at("errors").end(); ++it) {
    std::vector<double> row = it.value().get<std::vector<double>>();
    if (row.size() != 5)
      throw CorruptionError("error table: expected 5 severities for '" + it.key() + "'");
    t.errors[it.key()] = row;
  }
  return t;
}

inline json error_table_to_json(const ErrorTable& t) {
  json e = json::object();
  for (const auto& [name, row] : t.errors) e[name] = row;
  return json{{"clean_error", t.clean_error}, {"errors", e}};
}

inline json cmd_corrupt_eval(const json& cfg, const std::string& out) {
  SplitDataset data = load_or_generate(cfg);
  Network net = load_checkpoint(cfg);
  double rho = cfg.at("adapt").at("rho").get<double>();

  EvalOptions ev;
  ev.rho = rho;
  ev.batch_size = cfg.at("adapt").at("batch_size").get<int>();
  ev.seed = cfg.at("seed").get<uint64_t>();
  ev.blend = parse_blend(cfg.at("adapt").at("blend").get<std::string>());

  ErrorTable table =
      corruption_error_table(net, data.test, ev, hash64(ev.seed, 6));
  json table_json = error_table_to_json(table);
  detail::write_json_file(out + "/error_table.json", table_json);

  json report = base_report(cfg);
  report["rho"] = rho;
  report["n_test"] = data.test.size();
  report["clean_error"] = table.clean_error;
  report["errors"] = table_json["errors"];
  report["mce"] = nullptr;
  report["rmce"] = nullptr;

  std::string ref_path =
      cfg.at("corruption").at("reference_table_path").get<std::string>();
  if (!ref_path.empty()) {
    std::ifstream f(ref_path);
    if (!f) throw ConfigError("corruption.reference_table_path: cannot open '" +
                              ref_path + "'");
    ErrorTable ref = error_table_from_json(json::parse(f));
    report["mce"] = mce(table, ref);
    if (cfg.at("corruption").at("rmce").get<bool>()) {
      try {
        report["rmce"] = rmce(table, ref);
      } catch (const CorruptionError& e) {
        report["rmce_error"] = e.what();
      }
    }
  }
  detail::write_json_file(out + "/corrupt_report.json", report);

  std::string csv = "corruption,severity,error\n";
  for (const auto& [name, row] : table.errors)
    for (size_t s = 0; s < row.size(); ++s)
      csv += name + "," + std::to_string(s + 1) + "," + fmt_double(row[s]) + "\n";
  detail::write_text(out + "/corrupt_eval.csv", csv);
  return report;
}

// ---------------------------------------------------------------------------
// grad-map: per-pixel loss gradient magnitude images

inline json cmd_grad_map(const json& cfg, const std::string& out) {
  SplitDataset data = load_or_generate(cfg);
  Network net = load_checkpoint(cfg);
  double rho = cfg.at("adapt").at("rho").get<double>();
  BlendMode blend = parse_blend(cfg.at("adapt").at("blend").get<std::string>());
  std::vector<int> indices = cfg.at("grad_map").at("indices").get<std::vector<int>>();
  if (indices.empty()) throw ConfigError("grad_map.indices must be non-empty");
  for (int i : indices)
    if (i < 0 || i >= data.test.size())
      throw ConfigError("grad_map.indices: index " + std::to_string(i) +
                        " outside test split");

  auto [xb, yb] = gather_batch(data.test, indices);
  if (rho >= 0.0) {
    net.adapt(xb, rho, blend);
  } else {
    net.set_mode(BnMode::Frozen);
  }
  std::vector<int> pred = argmax_classes(net.forward(xb));

  int C = xb.dim(1), H = xb.dim(2), W = xb.dim(3);
  int64_t plane = int64_t(C) * H * W;
  json entries = json::array();
  for (size_t i = 0; i < indices.size(); ++i) {
    Tensor xi({1, C, H, W});
    std::copy(xb.data() + int64_t(i) * plane, xb.data() + int64_t(i + 1) * plane,
              xi.data());
    Tensor raw = loss_gradient_map(net, xi, yb[i]);
    Tensor norm = normalize_gradient_map(raw);
    Tensor img({C, H, W});
    std::copy(norm.data(), norm.data() + plane, img.data());
    std::string name = "grad_" + std::to_string(indices[i]) + ".pgm";
    write_pgm(out + "/" + name, img);
    entries.push_back(json{{"index", indices[i]},
                           {"label", yb[i]},
                           {"prediction", pred[i]},
                           {"file", name}});
  }

  json report = base_report(cfg);
  report["rho"] = rho;
  report["entries"] = entries;
  detail::write_json_file(out + "/grad_map_report.json", report);
  return report;
}

// ---------------------------------------------------------------------------
// sweep: rerun one subcommand across values of a single dotted config path

inline json run_command(const std::string& name, json cfg);  // forward

namespace detail {

inline std::vector<std::pair<std::string, json>> headline_metrics(
    const std::string& command, const json& report) {
  std::vector<std::pair<std::string, json>> out;
  auto pick = [&](const char* key) {
    if (report.contains(key)) out.emplace_back(key, report.at(key));
  };
  if (command == "eval-noise") {
    pick("accuracy_frozen");
    pick("accuracy_adapted");
  } else if (command == "attack") {
    pick("clean_accuracy");
    pick("robust_accuracy_frozen");
    pick("robust_accuracy_adaptive");
  } else if (command == "certify") {
    pick("certified_accuracy_r0");
    pick("mean_certified_radius");
    pick("abstain_rate");
  } else if (command == "corrupt-eval") {
    pick("clean_error");
    pick("mce");
    pick("rmce");
  } else {
    pick("test_accuracy");
  }
  return out;
}

}  // namespace detail

inline json cmd_sweep(const json& cfg, const std::string& out) {
  const json& sw = cfg.at("sweep");
  std::string command = sw.at("command").get<std::string>();
  std::string param = sw.at("param").get<std::string>();
  const json& values = sw.at("values");
  if (command == "sweep") throw ConfigError("sweep.command cannot be 'sweep'");
  if (!values.is_array() || values.empty())
    throw ConfigError("sweep.values must be a non-empty array");

  json rows = json::array();
  std::string csv;
  for (size_t i = 0; i < values.size(); ++i) {
    json sub = cfg;
    apply_override(sub, param + "=" + values[i].dump());
    sub["output_dir"] = out + "/run_" + std::to_string(i);
    json rep = run_command(command, sub);
    auto metrics = detail::headline_metrics(command, rep);
    json row{{"value", values[i]}};
    for (const auto& [k, v] : metrics) row[k] = v;
    row["run_dir"] = "run_" + std::to_string(i);
    rows.push_back(row);
    if (i == 0) {
      csv = "value";
      for (const auto& [k, v] : metrics) csv += "," + k;
      csv += "\n";
    }
    csv += values[i].dump();
    for (const auto& [k, v] : metrics)
      csv += "," + (v.is_null() ? std::string() : fmt_double(v.get<double>()));
    csv += "\n";
  }

  json report = base_report(cfg);
  report["command"] = command;
  report["param"] = param;
  report["rows"] = rows;
  detail::write_json_file(out + "/sweep_report.json", report);
  detail::write_text(out + "/sweep.csv", csv);
  return report;
}

// ---------------------------------------------------------------------------
// dispatcher

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {
      "gen-data", "train",        "eval-noise", "attack",
      "certify",  "corrupt-eval", "grad-map",   "sweep"};
  return names;
}

inline json run_command(const std::string& name, json cfg) {
  std::string out = cfg.at("output_dir").get<std::string>();
  if (out.empty()) throw ConfigError("output_dir must be non-empty");
  std::filesystem::create_directories(out);
  detail::write_json_file(out + "/resolved_config.json", cfg);

  if (name == "gen-data") return cmd_gen_data(cfg, out);
  if (name == "train") return cmd_train(cfg, out);
  if (name == "eval-noise") return cmd_eval_noise(cfg, out);
  if (name == "attack") return cmd_attack(cfg, out);
  if (name == "certify") return cmd_certify(cfg, out);
  if (name == "corrupt-eval") return cmd_corrupt_eval(cfg, out);
  if (name == "grad-map") return cmd_grad_map(cfg, out);
  if (name == "sweep") return cmd_sweep(cfg, out);
  throw ConfigError("unknown command '" + name + "'");
}

}  // namespace smoothcert
