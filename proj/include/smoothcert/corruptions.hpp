#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "smoothcert/rng.hpp"
#include "smoothcert/tensor.hpp"
#include "smoothcert/trainer.hpp"

namespace smoothcert {

enum class CorruptionKind {
  GaussianNoise,
  ShotNoise,
  ImpulseNoise,
  GaussianBlur,
  DefocusBlur,
  MotionBlur,
  Contrast,
  Brightness,
  Pixelate,
  Saturate,
};

inline constexpr std::array<CorruptionKind, 10> kAllCorruptions = {
    CorruptionKind::GaussianNoise, CorruptionKind::ShotNoise,
    CorruptionKind::ImpulseNoise,  CorruptionKind::GaussianBlur,
    CorruptionKind::DefocusBlur,   CorruptionKind::MotionBlur,
    CorruptionKind::Contrast,      CorruptionKind::Brightness,
    CorruptionKind::Pixelate,      CorruptionKind::Saturate,
};

inline const char* corruption_name(CorruptionKind k) {
  switch (k) {
    case CorruptionKind::GaussianNoise: return "gaussian_noise";
    case CorruptionKind::ShotNoise: return "shot_noise";
    case CorruptionKind::ImpulseNoise: return "impulse_noise";
    case CorruptionKind::GaussianBlur: return "gaussian_blur";
    case CorruptionKind::DefocusBlur: return "defocus_blur";
    case CorruptionKind::MotionBlur: return "motion_blur";
    case CorruptionKind::Contrast: return "contrast";
    case CorruptionKind::Brightness: return "brightness";
    case CorruptionKind::Pixelate: return "pixelate";
    default: return "saturate";
  }
}

inline std::optional<CorruptionKind> corruption_from_name(const std::string& s) {
  for (CorruptionKind k : kAllCorruptions)
    if (s == corruption_name(k)) return k;
  return std::nullopt;
}

// Severity parameter tables, scaled for 16x16 images. Larger severity always
// corrupts at least as much (in expected MSE); some neighbors intentionally
// tie (pixelate blocks) because integer block sizes on a 16px side leave no
// room for five distinct levels.
inline double corruption_param(CorruptionKind k, int severity) {
  if (severity < 1 || severity > 5)
    throw std::invalid_argument("corruption: severity must be in [1, 5]");
  static const std::map<CorruptionKind, std::array<double, 5>> table = {
      {CorruptionKind::GaussianNoise, {0.04, 0.08, 0.12, 0.18, 0.26}},
      {CorruptionKind::ShotNoise, {60.0, 25.0, 12.0, 5.0, 3.0}},
      {CorruptionKind::ImpulseNoise, {0.03, 0.06, 0.09, 0.17, 0.27}},
      {CorruptionKind::GaussianBlur, {0.4, 0.6, 0.9, 1.3, 1.8}},
      {CorruptionKind::DefocusBlur, {0.8, 1.2, 1.7, 2.3, 3.0}},
      {CorruptionKind::MotionBlur, {2.0, 3.0, 4.0, 5.0, 6.0}},
      {CorruptionKind::Contrast, {0.75, 0.6, 0.45, 0.3, 0.2}},
      {CorruptionKind::Brightness, {0.1, 0.2, 0.3, 0.4, 0.5}},
      {CorruptionKind::Pixelate, {1.0, 2.0, 2.0, 4.0, 4.0}},
      {CorruptionKind::Saturate, {1.3, 1.6, 2.2, 3.0, 4.0}},
  };
  return table.at(k)[size_t(severity - 1)];
}

namespace detail {

// Dense 2-D kernel convolution with replicate-edge handling, per channel.
inline void conv_kernel_image(const double* src, double* dst, int H, int W,
                              const std::vector<double>& kernel, int kh, int kw) {
  int cy = kh / 2, cx = kw / 2;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double s = 0.0;
      for (int i = 0; i < kh; ++i)
        for (int j = 0; j < kw; ++j) {
          int yy = y + i - cy;
          int xx = x + j - cx;
          yy = yy < 0 ? 0 : (yy >= H ? H - 1 : yy);
          xx = xx < 0 ? 0 : (xx >= W ? W - 1 : xx);
          s += kernel[size_t(i) * kw + j] * src[int64_t(yy) * W + xx];
        }
      dst[int64_t(y) * W + x] = s;
    }
}

inline std::vector<double> gaussian_kernel_2d(double sigma, int* side) {
  int r = std::max(1, int(std::ceil(3.0 * sigma)));
  *side = 2 * r + 1;
  std::vector<double> k(size_t(*side) * *side);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) {
      double v = std::exp(-(i * i + j * j) / (2.0 * sigma * sigma));
      k[size_t(i + r) * *side + size_t(j + r)] = v;
      sum += v;
    }
  for (double& v : k) v /= sum;
  return k;
}

inline std::vector<double> disc_kernel(double radius, int* side) {
  int r = std::max(1, int(std::ceil(radius)));
  *side = 2 * r + 1;
  std::vector<double> k(size_t(*side) * *side);
  double sum = 0.0;
  for (int i = -r; i <= r; ++i)
    for (int j = -r; j <= r; ++j) {
      // soft-edged disc: full weight inside, linear falloff over one pixel
      double d = std::sqrt(double(i * i + j * j));
      double v = std::min(1.0, std::max(0.0, radius + 0.5 - d));
      k[size_t(i + r) * *side + size_t(j + r)] = v;
      sum += v;
    }
  for (double& v : k) v /= sum;
  return k;
}

inline std::vector<double> motion_kernel(double length, int* side) {
  const double angle = 0.3490658503988659;  // 20 degrees
  int L = std::max(2, int(std::lround(length)));
  int r = L / 2 + 1;
  *side = 2 * r + 1;
  std::vector<double> k(size_t(*side) * *side, 0.0);
  double sum = 0.0;
  for (int t = 0; t < L; ++t) {
    double u = double(t) - double(L - 1) / 2.0;
    int dx = int(std::lround(u * std::cos(angle)));
    int dy = int(std::lround(u * std::sin(angle)));
    double& cell = k[size_t(dy + r) * *side + size_t(dx + r)];
    if (cell == 0.0) sum += 1.0;
    cell = 1.0;
  }
  for (double& v : k) v /= sum;
  return k;
}

}  // namespace detail

// Applies one corruption at an explicit parameter value. Stochastic kinds
// derive their noise from (seed, image index), so a fixed (seed, kind,
// severity) triple always produces the same output.
inline Tensor corrupt_with_param(const Tensor& batch, CorruptionKind kind,
                                 double param, uint64_t seed) {
  if (batch.ndim() != 4) throw ShapeError("corrupt: expects [N,C,H,W]");
  int N = batch.dim(0), C = batch.dim(1), H = batch.dim(2), W = batch.dim(3);
  int64_t plane = int64_t(H) * W;
  int64_t img = int64_t(C) * plane;
  Tensor out = Network::deep_copy(batch);
  auto clamp = [](double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); };

  switch (kind) {
    case CorruptionKind::GaussianNoise: {
      for (int i = 0; i < N; ++i) {
        Rng rng = Rng::substream(seed, 61, uint64_t(i));
        double* p = out.data() + i * img;
        for (int64_t j = 0; j < img; ++j) p[j] = clamp(p[j] + param * rng.normal());
      }
      break;
    }
    case CorruptionKind::ShotNoise: {
      for (int i = 0; i < N; ++i) {
        Rng rng = Rng::substream(seed, 62, uint64_t(i));
        double* p = out.data() + i * img;
        for (int64_t j = 0; j < img; ++j)
          p[j] = clamp(double(rng.poisson(std::max(0.0, p[j]) * param)) / param);
      }
      break;
    }
    case CorruptionKind::ImpulseNoise: {
      for (int i = 0; i < N; ++i) {
        Rng rng = Rng::substream(seed, 63, uint64_t(i));
        double* p = out.data() + i * img;
        for (int64_t j = 0; j < img; ++j)
          if (rng.uniform() < param) p[j] = rng.uniform() < 0.5 ? 0.0 : 1.0;
      }
      break;
    }
    case CorruptionKind::GaussianBlur:
    case CorruptionKind::DefocusBlur:
    case CorruptionKind::MotionBlur: {
      int side = 0;
      std::vector<double> kernel =
          kind == CorruptionKind::GaussianBlur
              ? detail::gaussian_kernel_2d(param, &side)
              : (kind == CorruptionKind::DefocusBlur
                     ? detail::disc_kernel(param, &side)
                     : detail::motion_kernel(param, &side));
      std::vector<double> tmp(static_cast<size_t>(plane));
      for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
        double* p = out.data() + nc * plane;
        detail::conv_kernel_image(p, tmp.data(), H, W, kernel, side, side);
        for (int64_t j = 0; j < plane; ++j) p[j] = clamp(tmp[size_t(j)]);
      }
      break;
    }
    case CorruptionKind::Contrast: {
      for (int i = 0; i < N; ++i)
        for (int c = 0; c < C; ++c) {
          double* p = out.data() + i * img + c * plane;
          double m = 0.0;
          for (int64_t j = 0; j < plane; ++j) m += p[j];
          m /= double(plane);
          for (int64_t j = 0; j < plane; ++j) p[j] = clamp(m + param * (p[j] - m));
        }
      break;
    }
    case CorruptionKind::Brightness: {
      double* p = out.data();
      for (int64_t j = 0; j < out.size(); ++j) p[j] = clamp(p[j] + param);
      break;
    }
    case CorruptionKind::Pixelate: {
      int b = std::max(1, int(std::lround(param)));
      for (int64_t nc = 0; nc < int64_t(N) * C; ++nc) {
        double* p = out.data() + nc * plane;
        for (int y0 = 0; y0 < H; y0 += b)
          for (int x0 = 0; x0 < W; x0 += b) {
            int y1 = std::min(H, y0 + b), x1 = std::min(W, x0 + b);
            double m = 0.0;
            for (int y = y0; y < y1; ++y)
              for (int x = x0; x < x1; ++x) m += p[int64_t(y) * W + x];
            m /= double((y1 - y0) * (x1 - x0));
            for (int y = y0; y < y1; ++y)
              for (int x = x0; x < x1; ++x) p[int64_t(y) * W + x] = m;
          }
      }
      break;
    }
    case CorruptionKind::Saturate: {
      for (int i = 0; i < N; ++i) {
        double* base = out.data() + i * img;
        for (int64_t j = 0; j < plane; ++j) {
          double gray = 0.0;
          for (int c = 0; c < C; ++c) gray += base[c * plane + j];
          gray /= double(C);
          for (int c = 0; c < C; ++c)
            base[c * plane + j] = clamp(gray + param * (base[c * plane + j] - gray));
        }
      }
      break;
    }
  }
  return out;
}

inline Tensor corrupt(const Tensor& batch, CorruptionKind kind, int severity,
                      uint64_t seed) {
  return corrupt_with_param(batch, kind, corruption_param(kind, severity), seed);
}

// ---------------------------------------------------------------------------
// Corruption benchmark aggregation.
// ---------------------------------------------------------------------------

struct CorruptionError : std::runtime_error {
  explicit CorruptionError(const std::string& m) : std::runtime_error(m) {}
};

// Error rates for one model: per kind a vector over severities, plus the
// clean error. Units just need to be consistent between model and reference.
struct ErrorTable {
  double clean_error = 0.0;
  std::map<std::string, std::vector<double>> errors;
};

namespace detail {

inline void check_aligned(const ErrorTable& model, const ErrorTable& ref) {
  if (model.errors.size() != ref.errors.size())
    throw CorruptionError("error tables list different corruption kinds");
  for (const auto& [kind, v] : model.errors) {
    auto it = ref.errors.find(kind);
    if (it == ref.errors.end())
      throw CorruptionError("reference table missing kind '" + kind + "'");
    if (it->second.size() != v.size())
      throw CorruptionError("severity count mismatch for kind '" + kind + "'");
  }
}

}  // namespace detail

// mean corruption error: 100 * mean over kinds of
//   sum_s err_model / sum_s err_reference
inline double mce(const ErrorTable& model, const ErrorTable& reference) {
  detail::check_aligned(model, reference);
  if (model.errors.empty()) throw CorruptionError("mce: empty error table");
  double acc = 0.0;
  for (const auto& [kind, v] : model.errors) {
    const std::vector<double>& r = reference.errors.at(kind);
    double sm = 0.0, sr = 0.0;
    for (double e : v) sm += e;
    for (double e : r) sr += e;
    if (sr == 0.0)
      throw CorruptionError("mce: reference error sum is zero for kind '" + kind + "'");
    acc += sm / sr;
  }
  return 100.0 * acc / double(model.errors.size());
}

// relative mCE: clean error subtracted per severity before the ratio.
// Reference gaps that sum to <= 0 are degenerate and rejected.
inline double rmce(const ErrorTable& model, const ErrorTable& reference) {
  detail::check_aligned(model, reference);
  if (model.errors.empty()) throw CorruptionError("rmce: empty error table");
  double acc = 0.0;
  for (const auto& [kind, v] : model.errors) {
    const std::vector<double>& r = reference.errors.at(kind);
    double sm = 0.0, sr = 0.0;
    for (double e : v) sm += e - model.clean_error;
    for (double e : r) sr += e - reference.clean_error;
    if (sr <= 0.0)
      throw CorruptionError("rmce: degenerate reference gap for kind '" + kind + "'");
    acc += sm / sr;
  }
  return 100.0 * acc / double(model.errors.size());
}

// Evaluates a model over every (kind, severity) cell plus clean, producing an
// ErrorTable in percent. Adaptation settings come from EvalOptions.
inline ErrorTable corruption_error_table(Network& net, const Dataset& ds,
                                         const EvalOptions& opt,
                                         uint64_t corruption_seed) {
  ErrorTable table;
  table.clean_error = 100.0 * (1.0 - evaluate(net, ds, opt));
  for (CorruptionKind kind : kAllCorruptions) {
    std::vector<double> row;
    for (int severity = 1; severity <= 5; ++severity) {
      Dataset corrupted;
      corrupted.num_classes = ds.num_classes;
      corrupted.labels = ds.labels;
      corrupted.images = corrupt(ds.images, kind, severity,
                                 hash64(corruption_seed, uint64_t(kind), uint64_t(severity)));
      row.push_back(100.0 * (1.0 - evaluate(net, corrupted, opt)));
    }
    table.errors[corruption_name(kind)] = row;
  }
  return table;
}

// ---------------------------------------------------------------------------
// Fourier inspection of corruption residuals.
// ---------------------------------------------------------------------------

// Magnitude spectrum |DFT(residual)| with the DC bin shifted to the center.
// Input [H,W], or [C,H,W] with channel magnitudes averaged.
inline Tensor fourier_spectrum(const Tensor& residual) {
  int C, H, W;
  if (residual.ndim() == 2) {
    C = 1;
    H = residual.dim(0);
    W = residual.dim(1);
  } else if (residual.ndim() == 3) {
    C = residual.dim(0);
    H = residual.dim(1);
    W = residual.dim(2);
  } else {
    throw ShapeError("fourier_spectrum: expects [H,W] or [C,H,W]");
  }
  Tensor out({H, W});
  std::vector<double> re_rows(size_t(H) * W), im_rows(size_t(H) * W);
  const double two_pi = 6.283185307179586476925286766559;
  for (int c = 0; c < C; ++c) {
    const double* src = residual.data() + int64_t(c) * H * W;
    // row DFT, then column DFT
    for (int y = 0; y < H; ++y)
      for (int v = 0; v < W; ++v) {
        double re = 0.0, im = 0.0;
        for (int x = 0; x < W; ++x) {
          double a = -two_pi * double(v) * double(x) / double(W);
          re += src[int64_t(y) * W + x] * std::cos(a);
          im += src[int64_t(y) * W + x] * std::sin(a);
        }
        re_rows[size_t(y) * W + size_t(v)] = re;
        im_rows[size_t(y) * W + size_t(v)] = im;
      }
    for (int u = 0; u < H; ++u)
      for (int v = 0; v < W; ++v) {
        double re = 0.0, im = 0.0;
        for (int y = 0; y < H; ++y) {
          double a = -two_pi * double(u) * double(y) / double(H);
          double cr = std::cos(a), ci = std::sin(a);
          double rr = re_rows[size_t(y) * W + size_t(v)];
          double ii = im_rows[size_t(y) * W + size_t(v)];
          re += rr * cr - ii * ci;
          im += rr * ci + ii * cr;
        }
        int uu = (u + H / 2) % H;
        int vv = (v + W / 2) % W;
        out.data()[int64_t(uu) * W + vv] += std::hypot(re, im) / double(C);
      }
  }
  return out;
}

}  // namespace smoothcert
