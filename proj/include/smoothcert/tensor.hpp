#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

// Dense f64 tensors plus a define-by-run reverse-mode tape. A Graph lives for
// one forward/backward pass and is rebuilt from scratch every step; nothing
// here is thread-safe and nothing needs to be.

namespace smoothcert {

struct TensorError : std::runtime_error {
  explicit TensorError(const std::string& m) : std::runtime_error(m) {}
};
struct ShapeError : TensorError {
  explicit ShapeError(const std::string& m) : TensorError(m) {}
};
struct NonFiniteError : TensorError {
  explicit NonFiniteError(const std::string& m) : TensorError(m) {}
};
struct GraphError : TensorError {
  explicit GraphError(const std::string& m) : TensorError(m) {}
};

class Graph;

class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(checked_numel(shape_), 0.0)) {}

  Tensor(std::vector<int> shape, std::vector<double> values)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<double>>(std::move(values))) {
    if (int64_t(data_->size()) != checked_numel(shape_))
      throw ShapeError("tensor: value count does not match shape");
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : *t.data_) x = v;
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return int(shape_.size()); }
  int dim(int i) const { return shape_[size_t(i)]; }
  int64_t size() const { return data_ ? int64_t(data_->size()) : 0; }
  bool empty() const { return !data_; }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }
  const std::shared_ptr<std::vector<double>>& storage() const { return data_; }

  double value() const {
    if (size() != 1) throw ShapeError("value(): tensor is not a scalar");
    return (*data_)[0];
  }

  bool tracked() const { return graph_ != nullptr; }
  Graph* graph() const { return graph_; }
  int node() const { return node_; }
  void bind(Graph* g, int node) {
    graph_ = g;
    node_ = node;
  }
  Tensor detached() const {
    Tensor t = *this;
    t.graph_ = nullptr;
    t.node_ = -1;
    return t;
  }

  // Grad of this tensor after Graph::backward; zeros if disconnected.
  std::vector<double> grad() const;

  static int64_t checked_numel(const std::vector<int>& shape) {
    if (shape.empty()) throw ShapeError("tensor: empty shape");
    int64_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ShapeError("tensor: non-positive dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
  Graph* graph_ = nullptr;
  int node_ = -1;
};

class Graph {
 public:
  using BackFn = std::function<void(Graph&, const std::vector<double>&)>;

  // Registers a tracked leaf. The returned tensor shares storage with v.
  Tensor var(const Tensor& v) {
    ensure_open("var");
    Tensor t = v.detached();
    t.bind(this, emit(v.size(), nullptr));
    return t;
  }

  // Internal: records an op node; `back` receives the upstream grad.
  int emit(int64_t numel, BackFn back) {
    ensure_open("op");
    nodes_.push_back(Node{std::move(back), {}, numel});
    return int(nodes_.size()) - 1;
  }

  // Internal: lazily sized grad accumulator for a node.
  std::vector<double>& grad_buf(int node) {
    Node& n = nodes_[size_t(node)];
    if (n.grad.empty()) n.grad.assign(size_t(n.numel), 0.0);
    return n.grad;
  }

  bool has_grad(int node) const { return !nodes_[size_t(node)].grad.empty(); }

  void backward(const Tensor& loss) {
    if (consumed_) throw GraphError("backward: graph already consumed");
    if (!loss.tracked() || loss.graph() != this)
      throw GraphError("backward: loss does not belong to this graph");
    if (loss.size() != 1) throw GraphError("backward: loss must be a scalar");
    consumed_ = true;
    grad_buf(loss.node())[0] = 1.0;
    // Creation order is a topological order, so one reverse sweep visits
    // every node after all of its consumers.
    for (int id = loss.node(); id >= 0; --id) {
      Node& n = nodes_[size_t(id)];
      if (n.grad.empty() || !n.back) continue;
      ++visits_;
      n.back(*this, n.grad);
    }
  }

  const std::vector<double>& grad_ref(const Tensor& t) const {
    check_membership(t);
    return nodes_[size_t(t.node())].grad;
  }

  std::vector<double> grad_of(const Tensor& t) const {
    check_membership(t);
    const Node& n = nodes_[size_t(t.node())];
    if (n.grad.empty()) return std::vector<double>(size_t(n.numel), 0.0);
    return n.grad;
  }

  bool consumed() const { return consumed_; }
  size_t node_count() const { return nodes_.size(); }
  size_t backward_visits() const { return visits_; }

 private:
  struct Node {
    BackFn back;
    std::vector<double> grad;
    int64_t numel;
  };

  void ensure_open(const char* what) const {
    if (consumed_)
      throw GraphError(std::string(what) + ": graph already consumed");
  }
  void check_membership(const Tensor& t) const {
    if (!t.tracked() || t.graph() != this)
      throw GraphError("grad: tensor does not belong to this graph");
    if (!consumed_) throw GraphError("grad: backward has not run");
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
  size_t visits_ = 0;
};

inline std::vector<double> Tensor::grad() const {
  if (!graph_) throw GraphError("grad: tensor is not tracked");
  return graph_->grad_of(*this);
}

namespace detail {

inline void check_finite(const Tensor& t, const char* op) {
  const double* p = t.data();
  int64_t n = t.size();
  for (int64_t i = 0; i < n; ++i)
    if (!std::isfinite(p[i]))
      throw NonFiniteError(std::string(op) + ": non-finite output");
}

inline Graph* merge_graphs(const Tensor& a, const Tensor& b, const char* op) {
  Graph* g = a.graph();
  Graph* h = b.graph();
  if (g && h && g != h)
    throw GraphError(std::string(op) + ": tensors belong to different graphs");
  return g ? g : h;
}

inline void axpy(double coef, const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] += coef * x[i];
}

// C[M,N] += A[M,K] * B[K,N]
inline void mm_acc(const double* A, const double* B, double* C, int M, int K,
                   int N) {
  for (int i = 0; i < M; ++i) {
    const double* a = A + int64_t(i) * K;
    double* c = C + int64_t(i) * N;
    for (int k = 0; k < K; ++k) axpy(a[k], B + int64_t(k) * N, c, N);
  }
}

// C[M,K] += A[M,N] * B^T, with B stored [K,N]
inline void mm_acc_nt(const double* A, const double* B, double* C, int M,
                      int N, int K) {
  for (int i = 0; i < M; ++i) {
    const double* a = A + int64_t(i) * N;
    double* c = C + int64_t(i) * K;
    for (int k = 0; k < K; ++k) {
      const double* b = B + int64_t(k) * N;
      double s = 0.0;
      for (int j = 0; j < N; ++j) s += a[j] * b[j];
      c[k] += s;
    }
  }
}

// C[K,N] += A^T * B, with A stored [M,K], B stored [M,N]
inline void mm_acc_tn(const double* A, const double* B, double* C, int M,
                      int K, int N) {
  for (int i = 0; i < M; ++i) {
    const double* a = A + int64_t(i) * K;
    const double* b = B + int64_t(i) * N;
    for (int k = 0; k < K; ++k) axpy(a[k], b, C + int64_t(k) * N, N);
  }
}

// Unpacks conv patches: cols[(c*kh+i)*kw+j][oy*ow+ox] = x[c][oy+i-pad][ox+j-pad]
inline void im2col(const double* x, int C, int H, int W, int kh, int kw,
                   int pad, int oh, int ow, double* cols) {
  for (int c = 0; c < C; ++c) {
    const double* xc = x + int64_t(c) * H * W;
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        double* row = cols + (int64_t(c) * kh * kw + int64_t(i) * kw + j) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy + i - pad;
          double* dst = row + int64_t(oy) * ow;
          if (iy < 0 || iy >= H) {
            std::memset(dst, 0, sizeof(double) * size_t(ow));
            continue;
          }
          const double* src = xc + int64_t(iy) * W;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox + j - pad;
            dst[ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

inline void col2im_acc(const double* cols, int C, int H, int W, int kh, int kw,
                       int pad, int oh, int ow, double* dx) {
  for (int c = 0; c < C; ++c) {
    double* xc = dx + int64_t(c) * H * W;
    for (int i = 0; i < kh; ++i) {
      for (int j = 0; j < kw; ++j) {
        const double* row =
            cols + (int64_t(c) * kh * kw + int64_t(i) * kw + j) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          int iy = oy + i - pad;
          if (iy < 0 || iy >= H) continue;
          double* dst = xc + int64_t(iy) * W;
          const double* src = row + int64_t(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) {
            int ix = ox + j - pad;
            if (ix >= 0 && ix < W) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace detail

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw ShapeError("matmul: expects rank-2 tensors");
  int M = a.dim(0), K = a.dim(1), K2 = b.dim(0), N = b.dim(1);
  if (K != K2) throw ShapeError("matmul: inner dimensions differ");
  Tensor out({M, N});
  detail::mm_acc(a.data(), b.data(), out.data(), M, K, N);
  detail::check_finite(out, "matmul");
  if (Graph* g = detail::merge_graphs(a, b, "matmul")) {
    auto as = a.storage();
    auto bs = b.storage();
    int an = a.node(), bn = b.node();
    out.bind(g, g->emit(out.size(), [=](Graph& gg, const std::vector<double>& up) {
      if (an >= 0)
        detail::mm_acc_nt(up.data(), bs->data(), gg.grad_buf(an).data(), M, N, K);
      if (bn >= 0)
        detail::mm_acc_tn(as->data(), up.data(), gg.grad_buf(bn).data(), M, K, N);
    }));
  }
  return out;
}

// Stride-1 zero-padded 2-D convolution; x [N,C,H,W], w [F,C,kh,kw].
inline Tensor conv2d(const Tensor& x, const Tensor& w, int pad) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw ShapeError("conv2d: expects rank-4 input and kernel");
  if (pad < 0) throw ShapeError("conv2d: negative padding");
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  int F = w.dim(0), Cw = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (C != Cw) throw ShapeError("conv2d: channel mismatch");
  int oh = H + 2 * pad - kh + 1;
  int ow = W + 2 * pad - kw + 1;
  if (oh <= 0 || ow <= 0) throw ShapeError("conv2d: kernel larger than padded input");
  int ckk = C * kh * kw;
  Tensor out({N, F, oh, ow});
  std::vector<double> cols(size_t(ckk) * oh * ow);
  for (int n = 0; n < N; ++n) {
    detail::im2col(x.data() + int64_t(n) * C * H * W, C, H, W, kh, kw, pad, oh,
                   ow, cols.data());
    detail::mm_acc(w.data(), cols.data(),
                   out.data() + int64_t(n) * F * oh * ow, F, ckk, oh * ow);
  }
  detail::check_finite(out, "conv2d");
  if (Graph* g = detail::merge_graphs(x, w, "conv2d")) {
    auto xs = x.storage();
    auto ws = w.storage();
    int xn = x.node(), wn = w.node();
    out.bind(g, g->emit(out.size(), [=](Graph& gg, const std::vector<double>& up) {
      std::vector<double> buf(size_t(ckk) * oh * ow);
      for (int n = 0; n < N; ++n) {
        const double* dout = up.data() + int64_t(n) * F * oh * ow;
        if (wn >= 0) {
          detail::im2col(xs->data() + int64_t(n) * C * H * W, C, H, W, kh, kw,
                         pad, oh, ow, buf.data());
          detail::mm_acc_nt(dout, buf.data(), gg.grad_buf(wn).data(), F,
                            oh * ow, ckk);
        }
        if (xn >= 0) {
          std::fill(buf.begin(), buf.end(), 0.0);
          detail::mm_acc_tn(ws->data(), dout, buf.data(), F, ckk, oh * ow);
          detail::col2im_acc(buf.data(), C, H, W, kh, kw, pad, oh, ow,
                             gg.grad_buf(xn).data() + int64_t(n) * C * H * W);
        }
      }
    }));
  }
  return out;
}

// Elementwise add, or bias broadcast of b [C] over a [N,C] / [N,C,H,W].
inline Tensor add(const Tensor& a, const Tensor& b) {
  bool same = a.shape() == b.shape();
  bool bias2 = !same && b.ndim() == 1 && a.ndim() == 2 && a.dim(1) == b.dim(0);
  bool bias4 = !same && b.ndim() == 1 && a.ndim() == 4 && a.dim(1) == b.dim(0);
  if (!same && !bias2 && !bias4)
    throw ShapeError("add: incompatible shapes");
  Tensor out(a.shape());
  const double* ad = a.data();
  const double* bd = b.data();
  double* od = out.data();
  int64_t n = a.size();
  if (same) {
    for (int64_t i = 0; i < n; ++i) od[i] = ad[i] + bd[i];
  } else {
    int C = b.dim(0);
    int64_t inner = bias2 ? 1 : int64_t(a.dim(2)) * a.dim(3);
    for (int64_t i = 0; i < n; ++i) od[i] = ad[i] + bd[(i / inner) % C];
  }
  detail::check_finite(out, "add");
  if (Graph* g = detail::merge_graphs(a, b, "add")) {
    int an = a.node(), bn = b.node();
    int C = b.dim(0);
    int64_t inner = same ? 0 : (bias2 ? 1 : int64_t(a.dim(2)) * a.dim(3));
    out.bind(g, g->emit(out.size(), [=](Graph& gg, const std::vector<double>& up) {
      if (an >= 0) detail::axpy(1.0, up.data(), gg.grad_buf(an).data(), n);
      if (bn >= 0) {
        double* gb = gg.grad_buf(bn).data();
        if (same) {
          detail::axpy(1.0, up.data(), gb, n);
        } else {
          for (int64_t i = 0; i < n; ++i) gb[(i / inner) % C] += up[i];
        }
      }
    }));
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch");
  Tensor out(a.shape());
  const double* ad = a.data();
  const double* bd = b.data();
  double* od = out.data();
  int64_t n = a.size();
  for (int64_t i = 0; i < n; ++i) od[i] = ad[i] * bd[i];
  detail::check_finite(out, "mul");
  if (Graph* g = detail::merge_graphs(a, b, "mul")) {
    auto as = a.storage();
    auto bs = b.storage();
    int an = a.node(), bn = b.node();
    out.bind(g, g->emit(out.size(), [=](Graph& gg, const std::vector<double>& up) {
      if (an >= 0) {
        double* ga = gg.grad_buf(an).data();
        const double* bv = bs->data();
        for (int64_t i = 0; i < n; ++i) ga[i] += up[i] * bv[i];
      }
      if (bn >= 0) {
        double* gb = gg.grad_buf(bn).data();
        const double* av = as->data();
        for (int64_t i = 0; i < n; ++i) gb[i] += up[i] * av[i];
      }
    }));
  }
  return out;
}

inline Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  const double* xd = x.data();
  double* od = out.data();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) od[i] = xd[i] > 0.0 ? xd[i] : 0.0;
  detail::check_finite(out, "relu");
  if (Graph* g = x.graph()) {
    auto xs = x.storage();
    int xn = x.node();
    out.bind(g, g->emit(out.size(), [=](Graph& gg, const std::vector<double>& up) {
      double* gx = gg.grad_buf(xn).data();
      const double* xv = xs->data();
      for (int64_t i = 0; i < n; ++i)
        if (xv[i] > 0.0) gx[i] += up[i];
    }));
  }
  return out;
}

inline Tensor reshape(const Tensor& x, std::vector<int> shape) {
  if (Tensor::checked_numel(shape) != x.size())
    throw ShapeError("reshape: element count mismatch");
  Tensor out(std::move(shape), std::vector<double>(x.data(), x.data() + x.size()));
  if (Graph* g = x.graph()) {
    int xn = x.node();
    int64_t n = x.size();
    out.bind(g, g->emit(n, [=](Graph& gg, const std::vector<double>& up) {
      detail::axpy(1.0, up.data(), gg.grad_buf(xn).data(), n);
    }));
  }
  return out;
}

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  const double* xd = x.data();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) s += xd[i];
  Tensor out = Tensor::scalar(s);
  detail::check_finite(out, "sum");
  if (Graph* g = x.graph()) {
    int xn = x.node();
    out.bind(g, g->emit(1, [=](Graph& gg, const std::vector<double>& up) {
      double* gx = gg.grad_buf(xn).data();
      for (int64_t i = 0; i < n; ++i) gx[i] += up[0];
    }));
  }
  return out;
}

inline Tensor mean(const Tensor& x) {
  int64_t n = x.size();
  double s = 0.0;
  const double* xd = x.data();
  for (int64_t i = 0; i < n; ++i) s += xd[i];
  Tensor out = Tensor::scalar(s / double(n));
  detail::check_finite(out, "mean");
  if (Graph* g = x.graph()) {
    int xn = x.node();
    out.bind(g, g->emit(1, [=](Graph& gg, const std::vector<double>& up) {
      double coef = up[0] / double(n);
      double* gx = gg.grad_buf(xn).data();
      for (int64_t i = 0; i < n; ++i) gx[i] += coef;
    }));
  }
  return out;
}

inline Tensor neg(const Tensor& x) {
  Tensor out(x.shape());
  const double* xd = x.data();
  double* od = out.data();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) od[i] = -xd[i];
  detail::check_finite(out, "neg");
  if (Graph* g = x.graph()) {
    int xn = x.node();
    out.bind(g, g->emit(n, [=](Graph& gg, const std::vector<double>& up) {
      detail::axpy(-1.0, up.data(), gg.grad_buf(xn).data(), n);
    }));
  }
  return out;
}

inline Tensor scale(const Tensor& x, double c) {
  Tensor out(x.shape());
  const double* xd = x.data();
  double* od = out.data();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) od[i] = c * xd[i];
  detail::check_finite(out, "scale");
  if (Graph* g = x.graph()) {
    int xn = x.node();
    out.bind(g, g->emit(n, [=](Graph& gg, const std::vector<double>& up) {
      detail::axpy(c, up.data(), gg.grad_buf(xn).data(), n);
    }));
  }
  return out;
}

inline Tensor log(const Tensor& x) {
  Tensor out(x.shape());
  const double* xd = x.data();
  double* od = out.data();
  int64_t n = x.size();
  for (int64_t i = 0; i < n; ++i) od[i] = std::log(xd[i]);
  detail::check_finite(out, "log");
  if (Graph* g = x.graph()) {
    auto xs = x.storage();
    int xn = x.node();
    out.bind(g, g->emit(n, [=](Graph& gg, const std::vector<double>& up) {
      double* gx = gg.grad_buf(xn).data();
      const double* xv = xs->data();
      for (int64_t i = 0; i < n; ++i) gx[i] += up[i] / xv[i];
    }));
  }
  return out;
}

// Row-wise softmax over [N,K].
inline Tensor softmax(const Tensor& x) {
  if (x.ndim() != 2) throw ShapeError("softmax: expects rank-2 logits");
  int N = x.dim(0), K = x.dim(1);
  Tensor out(x.shape());
  const double* xd = x.data();
  double* od = out.data();
  for (int i = 0; i < N; ++i) {
    const double* row = xd + int64_t(i) * K;
    double* orow = od + int64_t(i) * K;
    double m = row[0];
    for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
    double z = 0.0;
    for (int k = 0; k < K; ++k) {
      orow[k] = std::exp(row[k] - m);
      z += orow[k];
    }
    for (int k = 0; k < K; ++k) orow[k] /= z;
  }
  detail::check_finite(out, "softmax");
  if (Graph* g = x.graph()) {
    auto ys = out.storage();
    int xn = x.node();
    out.bind(g, g->emit(out.size(), [=](Graph& gg, const std::vector<double>& up) {
      double* gx = gg.grad_buf(xn).data();
      const double* y = ys->data();
      for (int i = 0; i < N; ++i) {
        const double* yr = y + int64_t(i) * K;
        const double* ur = up.data() + int64_t(i) * K;
        double dot = 0.0;
        for (int k = 0; k < K; ++k) dot += ur[k] * yr[k];
        double* gr = gx + int64_t(i) * K;
        for (int k = 0; k < K; ++k) gr[k] += yr[k] * (ur[k] - dot);
      }
    }));
  }
  return out;
}

// Mean negative log-likelihood of integer labels under softmax(logits).
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.ndim() != 2) throw ShapeError("cross_entropy: expects rank-2 logits");
  int N = logits.dim(0), K = logits.dim(1);
  if (int(labels.size()) != N)
    throw ShapeError("cross_entropy: label count does not match batch");
  for (int y : labels)
    if (y < 0 || y >= K) throw ShapeError("cross_entropy: label out of range");
  auto probs = std::make_shared<std::vector<double>>(size_t(N) * K);
  const double* xd = logits.data();
  double total = 0.0;
  for (int i = 0; i < N; ++i) {
    const double* row = xd + int64_t(i) * K;
    double* prow = probs->data() + int64_t(i) * K;
    double m = row[0];
    for (int k = 1; k < K; ++k) m = std::max(m, row[k]);
    double z = 0.0;
    for (int k = 0; k < K; ++k) {
      prow[k] = std::exp(row[k] - m);
      z += prow[k];
    }
    for (int k = 0; k < K; ++k) prow[k] /= z;
    total += (m + std::log(z)) - row[labels[size_t(i)]];
  }
  Tensor out = Tensor::scalar(total / double(N));
  detail::check_finite(out, "cross_entropy");
  if (Graph* g = logits.graph()) {
    int xn = logits.node();
    auto lab = labels;
    out.bind(g, g->emit(1, [=](Graph& gg, const std::vector<double>& up) {
      double coef = up[0] / double(N);
      double* gx = gg.grad_buf(xn).data();
      const double* p = probs->data();
      for (int i = 0; i < N; ++i) {
        double* gr = gx + int64_t(i) * K;
        const double* pr = p + int64_t(i) * K;
        for (int k = 0; k < K; ++k) gr[k] += coef * pr[k];
        gr[lab[size_t(i)]] -= coef;
      }
    }));
  }
  return out;
}

// out[i] = probs[i, labels[i]]; used to assemble per-example losses.
inline Tensor gather_classes(const Tensor& probs, const std::vector<int>& labels) {
  if (probs.ndim() != 2) throw ShapeError("gather_classes: expects rank-2 input");
  int N = probs.dim(0), K = probs.dim(1);
  if (int(labels.size()) != N)
    throw ShapeError("gather_classes: label count does not match batch");
  for (int y : labels)
    if (y < 0 || y >= K) throw ShapeError("gather_classes: label out of range");
  Tensor out({N});
  for (int i = 0; i < N; ++i)
    out.data()[i] = probs.data()[int64_t(i) * K + labels[size_t(i)]];
  detail::check_finite(out, "gather_classes");
  if (Graph* g = probs.graph()) {
    int xn = probs.node();
    auto lab = labels;
    out.bind(g, g->emit(N, [=](Graph& gg, const std::vector<double>& up) {
      double* gx = gg.grad_buf(xn).data();
      for (int i = 0; i < N; ++i)
        gx[int64_t(i) * K + lab[size_t(i)]] += up[size_t(i)];
    }));
  }
  return out;
}

// 2x2 mean pooling on [N,C,H,W] with even H and W.
inline Tensor meanpool2(const Tensor& x) {
  if (x.ndim() != 4) throw ShapeError("meanpool2: expects rank-4 input");
  int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (H % 2 || W % 2) throw ShapeError("meanpool2: odd spatial size");
  int oh = H / 2, ow = W / 2;
  Tensor out({N, C, oh, ow});
  const double* xd = x.data();
  double* od = out.data();
  for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
    const double* plane = xd + nc * H * W;
    double* oplane = od + nc * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int xq = 0; xq < ow; ++xq) {
        const double* p = plane + int64_t(2 * y) * W + 2 * xq;
        oplane[int64_t(y) * ow + xq] = 0.25 * (p[0] + p[1] + p[W] + p[W + 1]);
      }
  }
  detail::check_finite(out, "meanpool2");
  if (Graph* g = x.graph()) {
    int xn = x.node();
    out.bind(g, g->emit(out.size(), [=](Graph& gg, const std::vector<double>& up) {
      double* gx = gg.grad_buf(xn).data();
      for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
        double* plane = gx + nc * H * W;
        const double* uplane = up.data() + nc * oh * ow;
        for (int y = 0; y < oh; ++y)
          for (int xq = 0; xq < ow; ++xq) {
            double u = 0.25 * uplane[int64_t(y) * ow + xq];
            double* p = plane + int64_t(2 * y) * W + 2 * xq;
            p[0] += u;
            p[1] += u;
            p[W] += u;
            p[W + 1] += u;
          }
      }
    }));
  }
  return out;
}

}  // namespace smoothcert
