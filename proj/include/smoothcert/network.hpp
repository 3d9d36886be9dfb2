#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "smoothcert/data_io.hpp"
#include "smoothcert/rng.hpp"
#include "smoothcert/tensor.hpp"

namespace smoothcert {

// Batch-norm execution modes.
//   Train:    normalize with current batch stats, update running stats (EMA).
//   Frozen:   normalize with the stored running stats.
//   Adaptive: normalize with stats blended from running and test-batch stats.
enum class BnMode { Train, Frozen, Adaptive };

// How adapt() combines running and test-batch spread: blend standard
// deviations then square (default), or blend variances directly.
enum class BlendMode { StdDev, Variance };

struct NetworkError : std::runtime_error {
  explicit NetworkError(const std::string& m) : std::runtime_error(m) {}
};

struct BatchNormState {
  double eps = 1e-5;
  double momentum = 0.1;
  std::vector<double> mu_T, var_T;      // running training stats
  std::vector<double> mu_t, var_t;      // latest test-batch stats
  std::vector<double> mu_bar, var_bar;  // blended stats used in Adaptive mode
  double rho = 0.0;
  bool has_train_stats = false;
  bool has_adapted = false;
};

namespace detail {

// Per-channel mean and variance over [N,C] or [N,C,H,W].
inline void channel_stats(const Tensor& x, std::vector<double>& mean,
                          std::vector<double>& var_biased,
                          std::vector<double>& var_unbiased) {
  int C = x.dim(1);
  int64_t N = x.dim(0);
  int64_t inner = x.ndim() == 4 ? int64_t(x.dim(2)) * x.dim(3) : 1;
  int64_t M = N * inner;
  mean.assign(size_t(C), 0.0);
  var_biased.assign(size_t(C), 0.0);
  var_unbiased.assign(size_t(C), 0.0);
  const double* d = x.data();
  for (int64_t n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* p = d + (n * C + c) * inner;
      double s = 0.0;
      for (int64_t i = 0; i < inner; ++i) s += p[i];
      mean[size_t(c)] += s;
    }
  for (int c = 0; c < C; ++c) mean[size_t(c)] /= double(M);
  for (int64_t n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const double* p = d + (n * C + c) * inner;
      double m = mean[size_t(c)], s = 0.0;
      for (int64_t i = 0; i < inner; ++i) {
        double dev = p[i] - m;
        s += dev * dev;
      }
      var_biased[size_t(c)] += s;
    }
  for (int c = 0; c < C; ++c) {
    var_unbiased[size_t(c)] = var_biased[size_t(c)] / double(M - 1);
    var_biased[size_t(c)] /= double(M);
  }
}

}  // namespace detail

// Batch-norm op. In Train mode this both normalizes with batch stats and
// advances the running EMA; Frozen/Adaptive treat their stats as constants,
// so only a scale reaches the input gradient.
inline Tensor batchnorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        BatchNormState& st, BnMode mode) {
  if (x.ndim() != 2 && x.ndim() != 4)
    throw ShapeError("batchnorm: expects rank-2 or rank-4 input");
  int C = x.dim(1);
  if (gamma.size() != C || beta.size() != C)
    throw ShapeError("batchnorm: affine parameter size mismatch");
  if (int(st.mu_T.size()) != C && st.has_train_stats)
    throw ShapeError("batchnorm: stats size mismatch");
  int64_t N = x.dim(0);
  int64_t inner = x.ndim() == 4 ? int64_t(x.dim(2)) * x.dim(3) : 1;
  int64_t M = N * inner;

  std::vector<double> use_mu(static_cast<size_t>(C));
  std::vector<double> use_var(static_cast<size_t>(C));
  bool train = mode == BnMode::Train;
  if (train) {
    if (N < 2)
      throw NetworkError("batchnorm: batch size must be >= 2 in Train mode");
    std::vector<double> vb, vu;
    detail::channel_stats(x, use_mu, vb, vu);
    use_var = vb;  // biased variance normalizes the batch
    if (!st.has_train_stats) {
      st.mu_T.assign(size_t(C), 0.0);
      st.var_T.assign(size_t(C), 1.0);
      st.has_train_stats = true;
    }
    for (int c = 0; c < C; ++c) {
      st.mu_T[size_t(c)] =
          (1.0 - st.momentum) * st.mu_T[size_t(c)] + st.momentum * use_mu[size_t(c)];
      st.var_T[size_t(c)] =
          (1.0 - st.momentum) * st.var_T[size_t(c)] + st.momentum * vu[size_t(c)];
    }
  } else if (mode == BnMode::Frozen) {
    if (!st.has_train_stats)
      throw NetworkError("batchnorm: running stats not initialized for Frozen mode");
    use_mu = st.mu_T;
    use_var = st.var_T;
  } else {
    if (!st.has_adapted)
      throw NetworkError("batchnorm: no adapted stats for Adaptive mode");
    use_mu = st.mu_bar;
    use_var = st.var_bar;
  }

  auto inv = std::make_shared<std::vector<double>>(size_t(C));
  for (int c = 0; c < C; ++c)
    (*inv)[size_t(c)] = 1.0 / std::sqrt(use_var[size_t(c)] + st.eps);

  Tensor out(x.shape());
  auto xhat = std::make_shared<std::vector<double>>(size_t(x.size()));
  const double* xd = x.data();
  const double* gd = gamma.data();
  const double* bd = beta.data();
  double* od = out.data();
  for (int64_t n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double m = use_mu[size_t(c)], iv = (*inv)[size_t(c)];
      double gc = gd[c], bc = bd[c];
      const double* p = xd + (n * C + c) * inner;
      double* h = xhat->data() + (n * C + c) * inner;
      double* o = od + (n * C + c) * inner;
      for (int64_t i = 0; i < inner; ++i) {
        h[i] = (p[i] - m) * iv;
        o[i] = gc * h[i] + bc;
      }
    }
  detail::check_finite(out, "batchnorm");

  Graph* g = x.graph();
  if (Graph* gg = gamma.graph()) {
    if (g && gg != g) throw GraphError("batchnorm: tensors belong to different graphs");
    g = gg;
  }
  if (Graph* gb = beta.graph()) {
    if (g && gb != g) throw GraphError("batchnorm: tensors belong to different graphs");
    g = gb;
  }
  if (g) {
    int xn = x.node(), gn = gamma.node(), bn = beta.node();
    auto gs = gamma.storage();
    out.bind(g, g->emit(out.size(), [=](Graph& gg, const std::vector<double>& up) {
      const double* gv = gs->data();
      if (gn >= 0) {
        double* grad_g = gg.grad_buf(gn).data();
        for (int64_t n2 = 0; n2 < N; ++n2)
          for (int c = 0; c < C; ++c) {
            const double* u = up.data() + (n2 * C + c) * inner;
            const double* h = xhat->data() + (n2 * C + c) * inner;
            double s = 0.0;
            for (int64_t i = 0; i < inner; ++i) s += u[i] * h[i];
            grad_g[c] += s;
          }
      }
      if (bn >= 0) {
        double* grad_b = gg.grad_buf(bn).data();
        for (int64_t n2 = 0; n2 < N; ++n2)
          for (int c = 0; c < C; ++c) {
            const double* u = up.data() + (n2 * C + c) * inner;
            double s = 0.0;
            for (int64_t i = 0; i < inner; ++i) s += u[i];
            grad_b[c] += s;
          }
      }
      if (xn >= 0) {
        double* gx = gg.grad_buf(xn).data();
        if (!train) {
          for (int64_t n2 = 0; n2 < N; ++n2)
            for (int c = 0; c < C; ++c) {
              double coef = gv[c] * (*inv)[size_t(c)];
              const double* u = up.data() + (n2 * C + c) * inner;
              double* o = gx + (n2 * C + c) * inner;
              for (int64_t i = 0; i < inner; ++i) o[i] += coef * u[i];
            }
        } else {
          // Batch stats depend on x: dx = inv/M * (M*dxh - sum(dxh) - xh*sum(dxh*xh))
          for (int c = 0; c < C; ++c) {
            double sum_u = 0.0, sum_uh = 0.0;
            for (int64_t n2 = 0; n2 < N; ++n2) {
              const double* u = up.data() + (n2 * C + c) * inner;
              const double* h = xhat->data() + (n2 * C + c) * inner;
              for (int64_t i = 0; i < inner; ++i) {
                sum_u += u[i];
                sum_uh += u[i] * h[i];
              }
            }
            double coef = gv[c] * (*inv)[size_t(c)] / double(M);
            for (int64_t n2 = 0; n2 < N; ++n2) {
              const double* u = up.data() + (n2 * C + c) * inner;
              const double* h = xhat->data() + (n2 * C + c) * inner;
              double* o = gx + (n2 * C + c) * inner;
              for (int64_t i = 0; i < inner; ++i)
                o[i] += coef * (double(M) * u[i] - sum_u - h[i] * sum_uh);
            }
          }
        }
      }
    }));
  }
  return out;
}

struct Layer {
  enum class Kind { Conv2d, Dense, BatchNorm, Relu, MeanPool2, Flatten };
  Kind kind;
  Tensor weight;  // conv [F,C,kh,kw]; dense [in,out]
  Tensor bias;    // dense only
  bool has_bias = false;
  int pad = 0;
  Tensor gamma, beta;
  BatchNormState bn;
};

class Network {
 public:
  explicit Network(int classes) : classes_(classes) {
    if (classes < 1) throw NetworkError("network: classes must be >= 1");
  }
  Network(const Network&) = delete;
  Network& operator=(const Network&) = delete;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  Network clone() const {
    Network n(classes_);
    n.mode_ = mode_;
    n.layers_.reserve(layers_.size());
    for (const Layer& l : layers_) {
      Layer c = l;
      c.weight = deep_copy(l.weight);
      c.bias = deep_copy(l.bias);
      c.gamma = deep_copy(l.gamma);
      c.beta = deep_copy(l.beta);
      n.layers_.push_back(std::move(c));
    }
    return n;
  }

  void add_conv(int in_ch, int out_ch, int k, int pad, uint64_t seed) {
    Layer l;
    l.kind = Layer::Kind::Conv2d;
    l.pad = pad;
    l.weight = Tensor({out_ch, in_ch, k, k});
    kaiming_fill(l.weight, int64_t(in_ch) * k * k, seed);
    layers_.push_back(std::move(l));
  }

  void add_dense(int in, int out, bool bias, uint64_t seed) {
    Layer l;
    l.kind = Layer::Kind::Dense;
    l.weight = Tensor({in, out});
    kaiming_fill(l.weight, in, seed);
    l.has_bias = bias;
    if (bias) l.bias = Tensor({out});
    layers_.push_back(std::move(l));
  }

  void add_batchnorm(int channels) {
    Layer l;
    l.kind = Layer::Kind::BatchNorm;
    l.gamma = Tensor::full({channels}, 1.0);
    l.beta = Tensor({channels});
    layers_.push_back(std::move(l));
  }

  void add_relu() { layers_.push_back(Layer{Layer::Kind::Relu}); }
  void add_meanpool2() { layers_.push_back(Layer{Layer::Kind::MeanPool2}); }
  void add_flatten() { layers_.push_back(Layer{Layer::Kind::Flatten}); }

  // conv3x3(16)-BN-ReLU-conv3x3(32)-BN-ReLU-meanpool2-flatten-
  // dense(width)-BN-ReLU-dense(classes).
  static Network reference_cnn(int classes, uint64_t seed, int in_ch = 3,
                               int hw = 16, int width = 64) {
    Network n(classes);
    n.add_conv(in_ch, 16, 3, 1, hash64(seed, 0));
    n.add_batchnorm(16);
    n.add_relu();
    n.add_conv(16, 32, 3, 1, hash64(seed, 1));
    n.add_batchnorm(32);
    n.add_relu();
    n.add_meanpool2();
    n.add_flatten();
    n.add_dense(32 * (hw / 2) * (hw / 2), width, false, hash64(seed, 2));
    n.add_batchnorm(width);
    n.add_relu();
    n.add_dense(width, classes, true, hash64(seed, 3));
    return n;
  }

  int num_classes() const { return classes_; }
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  BnMode mode() const { return mode_; }

  // Atomic: validates every BN layer first, then switches.
  void set_mode(BnMode m) {
    for (const Layer& l : layers_) {
      if (l.kind != Layer::Kind::BatchNorm) continue;
      if (m == BnMode::Frozen && !l.bn.has_train_stats)
        throw NetworkError("set_mode: running stats not initialized for Frozen mode");
      if (m == BnMode::Adaptive && !l.bn.has_adapted)
        throw NetworkError("set_mode: no adapted stats for Adaptive mode");
    }
    mode_ = m;
  }

  Tensor forward(const Tensor& x, Graph* g = nullptr) {
    Tensor h = x;
    if (g && !h.tracked()) h = g->var(h);
    for (Layer& l : layers_) {
      switch (l.kind) {
        case Layer::Kind::Conv2d:
          h = conv2d(h, l.weight, l.pad);
          break;
        case Layer::Kind::Dense:
          h = matmul(h, l.weight);
          if (l.has_bias) h = add(h, l.bias);
          break;
        case Layer::Kind::BatchNorm:
          h = batchnorm(h, l.gamma, l.beta, l.bn, mode_);
          break;
        case Layer::Kind::Relu:
          h = relu(h);
          break;
        case Layer::Kind::MeanPool2:
          h = meanpool2(h);
          break;
        case Layer::Kind::Flatten:
          h = reshape(h, {h.dim(0), int(h.size() / h.dim(0))});
          break;
      }
    }
    return h;
  }

  // Re-estimates BN stats on a test batch in one sweep: each BN layer blends
  // mu_bar = rho*mu_t + (1-rho)*mu_T and (by default) s_bar = rho*s_t +
  // (1-rho)*s_T, with deeper layers seeing activations normalized by the
  // shallower layers' freshly blended stats. Affine params stay fixed.
  // Leaves the network in Adaptive mode.
  void adapt(const Tensor& batch, double rho, BlendMode blend = BlendMode::StdDev) {
    if (!(rho >= 0.0 && rho <= 1.0))
      throw NetworkError("adapt: rho must be in [0, 1]");
    if (batch.ndim() != 4 || batch.dim(0) < 2)
      throw NetworkError("adapt: batch of at least 2 images required");
    bool any_bn = false;
    for (const Layer& l : layers_)
      if (l.kind == Layer::Kind::BatchNorm) {
        any_bn = true;
        if (!l.bn.has_train_stats)
          throw NetworkError("adapt: running stats not initialized");
      }
    if (!any_bn) throw NetworkError("adapt: network has no batchnorm layer");

    Tensor h = batch;
    for (Layer& l : layers_) {
      switch (l.kind) {
        case Layer::Kind::Conv2d:
          h = conv2d(h, l.weight, l.pad);
          break;
        case Layer::Kind::Dense:
          h = matmul(h, l.weight);
          if (l.has_bias) h = add(h, l.bias);
          break;
        case Layer::Kind::BatchNorm: {
          BatchNormState& st = l.bn;
          int C = h.dim(1);
          std::vector<double> vb;
          detail::channel_stats(h, st.mu_t, vb, st.var_t);
          st.mu_bar.assign(size_t(C), 0.0);
          st.var_bar.assign(size_t(C), 0.0);
          for (int c = 0; c < C; ++c) {
            st.mu_bar[size_t(c)] =
                rho * st.mu_t[size_t(c)] + (1.0 - rho) * st.mu_T[size_t(c)];
            if (blend == BlendMode::StdDev) {
              double s = rho * std::sqrt(st.var_t[size_t(c)]) +
                         (1.0 - rho) * std::sqrt(st.var_T[size_t(c)]);
              st.var_bar[size_t(c)] = s * s;
            } else {
              st.var_bar[size_t(c)] =
                  rho * st.var_t[size_t(c)] + (1.0 - rho) * st.var_T[size_t(c)];
            }
          }
          st.rho = rho;
          st.has_adapted = true;
          h = batchnorm(h, l.gamma, l.beta, st, BnMode::Adaptive);
          break;
        }
        case Layer::Kind::Relu:
          h = relu(h);
          break;
        case Layer::Kind::MeanPool2:
          h = meanpool2(h);
          break;
        case Layer::Kind::Flatten:
          h = reshape(h, {h.dim(0), int(h.size() / h.dim(0))});
          break;
      }
    }
    mode_ = BnMode::Adaptive;
  }

  struct NamedParam {
    std::string name;
    Tensor* value;
  };

  std::vector<NamedParam> params() {
    std::vector<NamedParam> out;
    for (size_t i = 0; i < layers_.size(); ++i) {
      Layer& l = layers_[i];
      std::string base = "layers." + std::to_string(i) + ".";
      if (l.kind == Layer::Kind::Conv2d || l.kind == Layer::Kind::Dense) {
        out.push_back({base + "weight", &l.weight});
        if (l.has_bias) out.push_back({base + "bias", &l.bias});
      } else if (l.kind == Layer::Kind::BatchNorm) {
        out.push_back({base + "gamma", &l.gamma});
        out.push_back({base + "beta", &l.beta});
      }
    }
    return out;
  }

  int64_t param_count() {
    int64_t n = 0;
    for (const NamedParam& p : params()) n += p.value->size();
    return n;
  }

  void save(const std::string& rten_path, const std::string& json_path) {
    std::vector<RtenRecord> recs;
    for (const NamedParam& p : params())
      recs.push_back(RtenRecord::tensor(p.name, *p.value));
    nlohmann::json arch = nlohmann::json::array();
    for (size_t i = 0; i < layers_.size(); ++i) {
      const Layer& l = layers_[i];
      nlohmann::json j;
      switch (l.kind) {
        case Layer::Kind::Conv2d:
          j["kind"] = "conv2d";
          j["out"] = l.weight.dim(0);
          j["in"] = l.weight.dim(1);
          j["k"] = l.weight.dim(2);
          j["pad"] = l.pad;
          break;
        case Layer::Kind::Dense:
          j["kind"] = "dense";
          j["in"] = l.weight.dim(0);
          j["out"] = l.weight.dim(1);
          j["bias"] = l.has_bias;
          break;
        case Layer::Kind::BatchNorm:
          j["kind"] = "batchnorm";
          j["channels"] = l.gamma.dim(0);
          j["eps"] = l.bn.eps;
          j["momentum"] = l.bn.momentum;
          j["trained"] = l.bn.has_train_stats;
          if (l.bn.has_train_stats) {
            std::string base = "layers." + std::to_string(i) + ".bn.";
            recs.push_back(RtenRecord::tensor(
                base + "mu_T", Tensor({l.gamma.dim(0)}, l.bn.mu_T)));
            recs.push_back(RtenRecord::tensor(
                base + "var_T", Tensor({l.gamma.dim(0)}, l.bn.var_T)));
          }
          break;
        case Layer::Kind::Relu:
          j["kind"] = "relu";
          break;
        case Layer::Kind::MeanPool2:
          j["kind"] = "meanpool2";
          break;
        case Layer::Kind::Flatten:
          j["kind"] = "flatten";
          break;
      }
      arch.push_back(j);
    }
    nlohmann::json side;
    side["format"] = "smoothcert-net";
    side["classes"] = classes_;
    side["arch"] = arch;
    write_rten(rten_path, recs);
    std::ofstream f(json_path);
    if (!f) throw NetworkError("save: cannot open '" + json_path + "'");
    f << side.dump(2) << "\n";
  }

  static Network load(const std::string& rten_path, const std::string& json_path) {
    std::ifstream f(json_path);
    if (!f) throw NetworkError("load: cannot open '" + json_path + "'");
    nlohmann::json side = nlohmann::json::parse(f);
    if (side.value("format", "") != "smoothcert-net")
      throw NetworkError("load: not a network sidecar");
    Network net(side.at("classes").get<int>());
    for (const auto& j : side.at("arch")) {
      std::string kind = j.at("kind").get<std::string>();
      if (kind == "conv2d") {
        net.add_conv(j.at("in").get<int>(), j.at("out").get<int>(),
                     j.at("k").get<int>(), j.at("pad").get<int>(), 0);
      } else if (kind == "dense") {
        net.add_dense(j.at("in").get<int>(), j.at("out").get<int>(),
                      j.at("bias").get<bool>(), 0);
      } else if (kind == "batchnorm") {
        net.add_batchnorm(j.at("channels").get<int>());
        Layer& l = net.layers_.back();
        l.bn.eps = j.at("eps").get<double>();
        l.bn.momentum = j.at("momentum").get<double>();
        l.bn.has_train_stats = j.at("trained").get<bool>();
      } else if (kind == "relu") {
        net.add_relu();
      } else if (kind == "meanpool2") {
        net.add_meanpool2();
      } else if (kind == "flatten") {
        net.add_flatten();
      } else {
        throw NetworkError("load: unknown layer kind '" + kind + "'");
      }
    }
    std::vector<RtenRecord> recs = read_rten(rten_path);
    auto find = [&](const std::string& name) -> const RtenRecord& {
      for (const RtenRecord& r : recs)
        if (r.name == name) return r;
      throw NetworkError("load: missing record '" + name + "'");
    };
    for (const NamedParam& p : net.params()) {
      const RtenRecord& r = find(p.name);
      Tensor t = r.to_tensor();
      if (t.shape() != p.value->shape())
        throw NetworkError("load: shape mismatch for '" + p.name + "'");
      *p.value = t;
    }
    for (size_t i = 0; i < net.layers_.size(); ++i) {
      Layer& l = net.layers_[i];
      if (l.kind != Layer::Kind::BatchNorm || !l.bn.has_train_stats) continue;
      std::string base = "layers." + std::to_string(i) + ".bn.";
      l.bn.mu_T = find(base + "mu_T").f64;
      l.bn.var_T = find(base + "var_T").f64;
      if (int(l.bn.mu_T.size()) != l.gamma.dim(0))
        throw NetworkError("load: BN stats size mismatch");
    }
    bool all_trained = true;
    for (const Layer& l : net.layers_)
      if (l.kind == Layer::Kind::BatchNorm && !l.bn.has_train_stats)
        all_trained = false;
    net.mode_ = all_trained ? BnMode::Frozen : BnMode::Train;
    return net;
  }

  static Tensor deep_copy(const Tensor& t) {
    if (t.empty()) return Tensor();
    return Tensor(t.shape(), std::vector<double>(t.data(), t.data() + t.size()));
  }

 private:
  void kaiming_fill(Tensor& w, int64_t fan_in, uint64_t seed) {
    Rng rng(seed);
    double std = std::sqrt(2.0 / double(fan_in));
    rng.fill_normal(w.data(), size_t(w.size()), std);
  }

  int classes_;
  BnMode mode_ = BnMode::Train;
  std::vector<Layer> layers_;
};

// Binds every parameter to g as a tracked leaf for one pass; detaches on
// scope exit so no dangling graph pointers survive the step.
class ParamBinding {
 public:
  ParamBinding(Network& net, Graph& g) : net_(net) {
    for (auto& p : net_.params()) *p.value = g.var(*p.value);
  }
  ~ParamBinding() {
    for (auto& p : net_.params()) *p.value = p.value->detached();
  }
  ParamBinding(const ParamBinding&) = delete;
  ParamBinding& operator=(const ParamBinding&) = delete;

 private:
  Network& net_;
};

// Input-gradient saliency for one image; net must be in Frozen or Adaptive
// mode. Returns d(loss)/d(pixel) with the same shape as the image.
inline Tensor loss_gradient_map(Network& net, const Tensor& image, int label) {
  if (net.mode() == BnMode::Train)
    throw NetworkError("loss_gradient_map: net must be in Frozen or Adaptive mode");
  std::vector<int> shape = image.shape();
  Tensor batch = image;
  if (image.ndim() == 3)
    batch = reshape(image, {1, image.dim(0), image.dim(1), image.dim(2)});
  else if (image.ndim() != 4 || image.dim(0) != 1)
    throw ShapeError("loss_gradient_map: expects one image");
  Graph g;
  Tensor xt = g.var(batch.detached());
  Tensor logits = net.forward(xt, &g);
  Tensor loss = cross_entropy(logits, {label});
  g.backward(loss);
  std::vector<double> grad = g.grad_of(xt);
  if (image.ndim() == 3) return Tensor(shape, std::move(grad));
  return Tensor({image.dim(1), image.dim(2), image.dim(3)}, std::move(grad));
}

// Maps a raw gradient to displayable [0,1]: 0.5 + (v - mean)/(6*std), clipped.
// A zero-variance map renders flat gray.
inline Tensor normalize_gradient_map(const Tensor& raw) {
  int64_t n = raw.size();
  const double* d = raw.data();
  double mu = 0.0;
  for (int64_t i = 0; i < n; ++i) mu += d[i];
  mu /= double(n);
  double var = 0.0;
  for (int64_t i = 0; i < n; ++i) var += (d[i] - mu) * (d[i] - mu);
  var /= double(n);
  double sd = std::sqrt(var);
  Tensor out(raw.shape());
  double* o = out.data();
  if (sd == 0.0) {
    for (int64_t i = 0; i < n; ++i) o[i] = 0.5;
    return out;
  }
  for (int64_t i = 0; i < n; ++i) {
    double v = 0.5 + (d[i] - mu) / (6.0 * sd);
    o[i] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  }
  return out;
}

inline std::vector<int> argmax_classes(const Tensor& logits) {
  if (logits.ndim() != 2) throw ShapeError("argmax_classes: expects [N,K]");
  int N = logits.dim(0), K = logits.dim(1);
  std::vector<int> out(static_cast<size_t>(N));
  for (int i = 0; i < N; ++i) {
    const double* row = logits.data() + int64_t(i) * K;
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (row[k] > row[best]) best = k;  // ties keep the lowest index
    out[size_t(i)] = best;
  }
  return out;
}

}  // namespace smoothcert
