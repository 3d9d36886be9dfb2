#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "smoothcert/rng.hpp"
#include "smoothcert/tensor.hpp"

namespace smoothcert {

// ---------------------------------------------------------------------------
// RTEN: a flat named-tensor container.
//   magic "RTEN" | u16 version=1 | u32 record count
//   per record: u16 name_len | name | u8 dtype (0=f64, 1=u32) | u8 ndim |
//               u32 dims[ndim] | little-endian payload
// ---------------------------------------------------------------------------

struct RtenError : std::runtime_error {
  enum class Code {
    BadMagic,
    BadVersion,
    Truncated,
    DuplicateName,
    BadDtype,
    BadRecord,
    Io,
  };
  Code code;
  RtenError(Code c, const std::string& m) : std::runtime_error(m), code(c) {}
};

struct RtenRecord {
  std::string name;
  uint8_t dtype = 0;  // 0 = f64, 1 = u32
  std::vector<uint32_t> dims;
  std::vector<double> f64;
  std::vector<uint32_t> u32;

  int64_t numel() const {
    int64_t n = 1;
    for (uint32_t d : dims) n *= int64_t(d);
    return n;
  }

  static RtenRecord tensor(const std::string& name, const Tensor& t) {
    RtenRecord r;
    r.name = name;
    r.dtype = 0;
    for (int d : t.shape()) r.dims.push_back(uint32_t(d));
    r.f64.assign(t.data(), t.data() + t.size());
    return r;
  }

  static RtenRecord ints(const std::string& name, const std::vector<uint32_t>& v) {
    RtenRecord r;
    r.name = name;
    r.dtype = 1;
    r.dims = {uint32_t(v.size())};
    r.u32 = v;
    return r;
  }

  Tensor to_tensor() const {
    if (dtype != 0) throw RtenError(RtenError::Code::BadDtype,
                                    "rten: record '" + name + "' is not f64");
    std::vector<int> shape;
    for (uint32_t d : dims) shape.push_back(int(d));
    return Tensor(shape, f64);
  }
};

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T get_le(const std::string& in, size_t& pos) {
  if (pos + sizeof(T) > in.size())
    throw RtenError(RtenError::Code::Truncated, "rten: truncated file");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string encode_rten(const std::vector<RtenRecord>& records) {
  std::set<std::string> seen;
  std::string out;
  out.append("RTEN", 4);
  detail::put_le<uint16_t>(out, 1);
  detail::put_le<uint32_t>(out, uint32_t(records.size()));
  for (const RtenRecord& r : records) {
    if (!seen.insert(r.name).second)
      throw RtenError(RtenError::Code::DuplicateName,
                      "rten: duplicate record name '" + r.name + "'");
    if (r.dtype > 1)
      throw RtenError(RtenError::Code::BadDtype, "rten: unknown dtype");
    int64_t n = r.numel();
    if ((r.dtype == 0 && int64_t(r.f64.size()) != n) ||
        (r.dtype == 1 && int64_t(r.u32.size()) != n))
      throw RtenError(RtenError::Code::BadRecord,
                      "rten: payload does not match dims for '" + r.name + "'");
    detail::put_le<uint16_t>(out, uint16_t(r.name.size()));
    out.append(r.name);
    detail::put_le<uint8_t>(out, r.dtype);
    detail::put_le<uint8_t>(out, uint8_t(r.dims.size()));
    for (uint32_t d : r.dims) detail::put_le<uint32_t>(out, d);
    if (r.dtype == 0)
      for (double v : r.f64) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        detail::put_le<uint64_t>(out, bits);
      }
    else
      for (uint32_t v : r.u32) detail::put_le<uint32_t>(out, v);
  }
  return out;
}

inline std::vector<RtenRecord> decode_rten(const std::string& blob) {
  size_t pos = 0;
  if (blob.size() < 4 || blob.compare(0, 4, "RTEN") != 0)
    throw RtenError(RtenError::Code::BadMagic, "rten: bad magic");
  pos = 4;
  uint16_t version = detail::get_le<uint16_t>(blob, pos);
  if (version != 1)
    throw RtenError(RtenError::Code::BadVersion, "rten: unsupported version");
  uint32_t count = detail::get_le<uint32_t>(blob, pos);
  std::vector<RtenRecord> records;
  std::set<std::string> seen;
  for (uint32_t i = 0; i < count; ++i) {
    RtenRecord r;
    uint16_t name_len = detail::get_le<uint16_t>(blob, pos);
    if (pos + name_len > blob.size())
      throw RtenError(RtenError::Code::Truncated, "rten: truncated name");
    r.name.assign(blob, pos, name_len);
    pos += name_len;
    if (!seen.insert(r.name).second)
      throw RtenError(RtenError::Code::DuplicateName,
                      "rten: duplicate record name '" + r.name + "'");
    r.dtype = detail::get_le<uint8_t>(blob, pos);
    if (r.dtype > 1)
      throw RtenError(RtenError::Code::BadDtype, "rten: unknown dtype");
    uint8_t ndim = detail::get_le<uint8_t>(blob, pos);
    for (uint8_t d = 0; d < ndim; ++d)
      r.dims.push_back(detail::get_le<uint32_t>(blob, pos));
    int64_t n = r.numel();
    if (r.dtype == 0) {
      r.f64.resize(size_t(n));
      for (int64_t j = 0; j < n; ++j) {
        uint64_t bits = detail::get_le<uint64_t>(blob, pos);
        std::memcpy(&r.f64[size_t(j)], &bits, 8);
      }
    } else {
      r.u32.resize(size_t(n));
      for (int64_t j = 0; j < n; ++j)
        r.u32[size_t(j)] = detail::get_le<uint32_t>(blob, pos);
    }
    records.push_back(std::move(r));
  }
  if (pos != blob.size())
    throw RtenError(RtenError::Code::BadRecord, "rten: trailing bytes");
  return records;
}

inline void write_rten(const std::string& path, const std::vector<RtenRecord>& records) {
  std::string blob = encode_rten(records);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RtenError(RtenError::Code::Io, "rten: cannot open '" + path + "'");
  f.write(blob.data(), std::streamsize(blob.size()));
  if (!f) throw RtenError(RtenError::Code::Io, "rten: write failed for '" + path + "'");
}

inline std::vector<RtenRecord> read_rten(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw RtenError(RtenError::Code::Io, "rten: cannot open '" + path + "'");
  std::string blob((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return decode_rten(blob);
}

// ---------------------------------------------------------------------------
// Synthetic shape dataset: k classes of procedurally rendered 3-channel
// images in [0,1], with per-image jitter in position, scale, orientation,
// intensity and tint. Classes are visually distinct shape families.
// ---------------------------------------------------------------------------

struct Dataset {
  Tensor images;  // [N,3,H,W]
  std::vector<int> labels;
  int num_classes = 0;
  uint64_t seed = 0;  // generator seed, echoed into manifests

  int64_t size() const { return int64_t(labels.size()); }
};

struct DataSplits {
  Dataset train, val, test;
};

namespace detail {

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

inline double smoothstep_edge(double d, double width) {
  // 1 well inside (d << 0), 0 well outside (d >> 0).
  double t = clamp01(0.5 - d / width);
  return t * t * (3.0 - 2.0 * t);
}

// Signed distances (negative inside) on jittered local coords.
inline double shape_sdf(int family, double px, double py) {
  auto frac = [](double v) { return v - std::floor(v); };
  switch (family) {
    case 0:  // disc
      return std::hypot(px, py) - 0.58;
    case 1:  // ring
      return std::fabs(std::hypot(px, py) - 0.52) - 0.16;
    case 2:  // solid bar
      return std::max(std::fabs(px) - 0.66, std::fabs(py) - 0.30);
    case 3:  // cross
      return std::min(std::max(std::fabs(px) - 0.72, std::fabs(py) - 0.17),
                      std::max(std::fabs(px) - 0.17, std::fabs(py) - 0.72));
    case 4:  // stripes
      return (std::fabs(frac(py * 1.55) - 0.5) - 0.26) / 1.55;
    case 5:  // checkerboard
      return -std::sin(3.6 * px) * std::sin(3.6 * py) * 0.28;
    case 6: {  // triangle
      double r = 0.62;
      double k = 1.7320508075688772;
      double x = std::fabs(px) - r;
      double y = py + r / k;
      if (x + k * y > 0.0) {
        double nx = (x - k * y) * 0.5;
        double ny = (-k * x - y) * 0.5;
        x = nx;
        y = ny;
      }
      x -= std::min(std::max(x, -2.0 * r), 0.0);
      return -std::hypot(x, y) * (y < 0.0 ? -1.0 : 1.0);
    }
    default:  // diagonal stripes
      return (std::fabs(frac((px + py) * 1.35) - 0.5) - 0.24) / 1.35;
  }
}

}  // namespace detail

inline Dataset gen_synthetic(int classes, int per_class, int hw, uint64_t seed) {
  if (classes < 2 || classes > 8)
    throw std::invalid_argument("gen_synthetic: classes must be in [2, 8]");
  if (per_class < 1) throw std::invalid_argument("gen_synthetic: per_class must be >= 1");
  if (hw < 4) throw std::invalid_argument("gen_synthetic: image side must be >= 4");
  int64_t n = int64_t(classes) * per_class;
  Dataset ds;
  ds.num_classes = classes;
  ds.seed = seed;
  ds.images = Tensor({int(n), 3, hw, hw});
  ds.labels.resize(size_t(n));
  double* img = ds.images.data();
  for (int64_t idx = 0; idx < n; ++idx) {
    int cls = int(idx / per_class);
    ds.labels[size_t(idx)] = cls;
    Rng rng = Rng::substream(seed, 11, uint64_t(idx));
    double cx = rng.uniform(-0.22, 0.22);
    double cy = rng.uniform(-0.22, 0.22);
    double scale = rng.uniform(0.6, 0.95);
    double theta = rng.uniform(-0.45, 0.45);
    double fg = rng.uniform(0.7, 1.0);
    double bg = rng.uniform(0.02, 0.14);
    double tint[3] = {rng.uniform(0.78, 1.0), rng.uniform(0.78, 1.0),
                      rng.uniform(0.78, 1.0)};
    double ct = std::cos(theta), st = std::sin(theta);
    double* base = img + idx * 3 * hw * hw;
    for (int y = 0; y < hw; ++y) {
      for (int x = 0; x < hw; ++x) {
        double u = (2.0 * (x + 0.5) / hw - 1.0 - cx) / scale;
        double v = (2.0 * (y + 0.5) / hw - 1.0 - cy) / scale;
        double px = ct * u + st * v;
        double py = -st * u + ct * v;
        double d = detail::shape_sdf(cls, px, py);
        double lum = bg + (fg - bg) * detail::smoothstep_edge(d, 0.22);
        for (int c = 0; c < 3; ++c) {
          double noise = 0.02 * rng.normal();
          base[(int64_t(c) * hw + y) * hw + x] =
              detail::clamp01(lum * tint[c] + noise);
        }
      }
    }
  }
  return ds;
}

inline Dataset subset(const Dataset& ds, const std::vector<int>& idx) {
  Dataset out;
  out.num_classes = ds.num_classes;
  out.seed = ds.seed;
  if (idx.empty()) return out;  // images stay unallocated
  int C = ds.images.dim(1), H = ds.images.dim(2), W = ds.images.dim(3);
  out.images = Tensor({int(idx.size()), C, H, W});
  out.labels.resize(idx.size());
  int64_t plane = int64_t(C) * H * W;
  for (size_t i = 0; i < idx.size(); ++i) {
    std::memcpy(out.images.data() + int64_t(i) * plane,
                ds.images.data() + int64_t(idx[i]) * plane,
                sizeof(double) * size_t(plane));
    out.labels[i] = ds.labels[size_t(idx[i])];
  }
  return out;
}

struct SplitIndices {
  std::vector<int> train, val, test;
};

// Stratified split; every index lands in exactly one of train/val/test.
inline SplitIndices split_indices(const Dataset& ds, double val_frac,
                                  double test_frac, uint64_t seed) {
  if (val_frac < 0.0 || test_frac < 0.0 || val_frac + test_frac >= 1.0)
    throw std::invalid_argument("split_dataset: bad fractions");
  SplitIndices out;
  for (int cls = 0; cls < ds.num_classes; ++cls) {
    std::vector<int> idx;
    for (int64_t i = 0; i < ds.size(); ++i)
      if (ds.labels[size_t(i)] == cls) idx.push_back(int(i));
    Rng rng = Rng::substream(seed, 13, uint64_t(cls));
    std::vector<size_t> perm = rng.permutation(idx.size());
    size_t n_te = size_t(std::llround(test_frac * double(idx.size())));
    size_t n_va = size_t(std::llround(val_frac * double(idx.size())));
    for (size_t i = 0; i < idx.size(); ++i) {
      int orig = idx[perm[i]];
      if (i < n_te)
        out.test.push_back(orig);
      else if (i < n_te + n_va)
        out.val.push_back(orig);
      else
        out.train.push_back(orig);
    }
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline DataSplits split_dataset(const Dataset& ds, double val_frac,
                                double test_frac, uint64_t seed) {
  SplitIndices si = split_indices(ds, val_frac, test_frac, seed);
  return DataSplits{subset(ds, si.train), subset(ds, si.val), subset(ds, si.test)};
}

// Deterministic batch index groups; the final short batch is kept.
inline std::vector<std::vector<int>> batches(int64_t n, int batch_size,
                                             uint64_t seed, bool shuffle = true) {
  if (batch_size < 1) throw std::invalid_argument("batches: batch_size must be >= 1");
  std::vector<int> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[size_t(i)] = int(i);
  if (shuffle) {
    Rng rng = Rng::substream(seed, 17, 0);
    std::vector<size_t> perm = rng.permutation(size_t(n));
    for (int64_t i = 0; i < n; ++i) order[size_t(i)] = int(perm[size_t(i)]);
  }
  std::vector<std::vector<int>> out;
  for (int64_t start = 0; start < n; start += batch_size) {
    int64_t end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  return out;
}

inline std::pair<Tensor, std::vector<int>> gather_batch(const Dataset& ds,
                                                        const std::vector<int>& idx) {
  Dataset s = subset(ds, idx);
  return {s.images, s.labels};
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::vector<uint32_t> labels(ds.labels.begin(), ds.labels.end());
  write_rten(path, {RtenRecord::tensor("images", ds.images),
                    RtenRecord::ints("labels", labels),
                    RtenRecord::ints("num_classes", {uint32_t(ds.num_classes)}),
                    RtenRecord::ints("seed", {uint32_t(ds.seed & 0xffffffffu),
                                              uint32_t(ds.seed >> 32)})});
}

inline Dataset load_dataset(const std::string& path) {
  std::vector<RtenRecord> recs = read_rten(path);
  Dataset ds;
  bool have_images = false, have_labels = false, have_k = false;
  for (const RtenRecord& r : recs) {
    if (r.name == "images") {
      ds.images = r.to_tensor();
      have_images = true;
    } else if (r.name == "labels") {
      ds.labels.assign(r.u32.begin(), r.u32.end());
      have_labels = true;
    } else if (r.name == "num_classes") {
      ds.num_classes = int(r.u32.at(0));
      have_k = true;
    } else if (r.name == "seed") {
      ds.seed = uint64_t(r.u32.at(0)) | (uint64_t(r.u32.at(1)) << 32);
    }
  }
  if (!have_images || !have_labels || !have_k)
    throw RtenError(RtenError::Code::BadRecord, "dataset: missing records");
  if (ds.images.ndim() != 4 || ds.images.dim(0) != int(ds.labels.size()))
    throw RtenError(RtenError::Code::BadRecord, "dataset: shape mismatch");
  return ds;
}

// 8-bit binary PGM; input [H,W] or [C,H,W] (channels averaged), values
// clamped to [0,1].
inline void write_pgm(const std::string& path, const Tensor& img) {
  int H, W, C;
  if (img.ndim() == 2) {
    C = 1;
    H = img.dim(0);
    W = img.dim(1);
  } else if (img.ndim() == 3) {
    C = img.dim(0);
    H = img.dim(1);
    W = img.dim(2);
  } else {
    throw ShapeError("write_pgm: expects [H,W] or [C,H,W]");
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("write_pgm: cannot open '" + path + "'");
  f << "P5\n" << W << " " << H << "\n255\n";
  const double* d = img.data();
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double v = 0.0;
      for (int c = 0; c < C; ++c) v += d[(int64_t(c) * H + y) * W + x];
      v = detail::clamp01(v / C);
      f.put(char(uint8_t(std::lround(v * 255.0))));
    }
  if (!f) throw std::runtime_error("write_pgm: write failed for '" + path + "'");
}

}  // namespace smoothcert
