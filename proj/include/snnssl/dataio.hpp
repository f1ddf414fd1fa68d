#pragma once

// SNNT tensor container, datasets and synthetic generators.
//
// Container layout (little-endian):
//   "SNNT" | u32 version (=1) | u8 dtype (0=f32, 1=f64, 2=u8) | u8 ndim |
//   ndim x u64 dims | row-major payload

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "snnssl/tensor.hpp"

namespace snnssl {

enum class DType : std::uint8_t { f32 = 0, f64 = 1, u8 = 2 };

inline std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::f32: return 4;
    case DType::f64: return 8;
    case DType::u8: return 1;
  }
  throw FormatError("unknown dtype");
}

struct Container {
  DType dtype = DType::f32;
  Shape dims;
  std::vector<std::uint8_t> payload;
};

inline constexpr std::array<char, 4> kContainerMagic{'S', 'N', 'N', 'T'};
inline constexpr std::uint32_t kContainerVersion = 1;

namespace detail {

template <class U>
void put_le(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <class U>
U get_le(const std::uint8_t* p) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(p[i]) << (8 * i);
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_container(const Container& c) {
  if (c.dims.size() > 255) throw FormatError("container: too many dimensions");
  if (c.payload.size() != numel(c.dims) * dtype_size(c.dtype)) throw FormatError("container: payload/dims mismatch");
  std::vector<std::uint8_t> out(kContainerMagic.begin(), kContainerMagic.end());
  detail::put_le<std::uint32_t>(out, kContainerVersion);
  out.push_back(static_cast<std::uint8_t>(c.dtype));
  out.push_back(static_cast<std::uint8_t>(c.dims.size()));
  for (auto d : c.dims) detail::put_le<std::uint64_t>(out, d);
  out.insert(out.end(), c.payload.begin(), c.payload.end());
  return out;
}

inline Container decode_container(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || !std::equal(kContainerMagic.begin(), kContainerMagic.end(), bytes.begin())) {
    throw FormatError("container: bad magic");
  }
  if (bytes.size() < 10) throw FormatError("container: truncated header");
  auto version = detail::get_le<std::uint32_t>(bytes.data() + 4);
  if (version != kContainerVersion) throw FormatError("container: unsupported version " + std::to_string(version));
  auto code = bytes[8];
  if (code > 2) throw FormatError("container: unknown dtype " + std::to_string(code));
  Container c;
  c.dtype = static_cast<DType>(code);
  std::size_t ndim = bytes[9], pos = 10;
  if (bytes.size() < pos + 8 * ndim) throw FormatError("container: truncated dims");
  for (std::size_t i = 0; i < ndim; ++i, pos += 8) c.dims.push_back(detail::get_le<std::uint64_t>(bytes.data() + pos));
  std::size_t want = numel(c.dims) * dtype_size(c.dtype);
  std::size_t have = bytes.size() - pos;
  if (have < want) {
    throw FormatError("container: truncated payload (" + std::to_string(have) + " of " + std::to_string(want) +
                      " bytes)");
  }
  if (have > want) throw FormatError("container: trailing bytes after payload");
  c.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return c;
}

inline void write_container(const std::filesystem::path& path, const Container& c) {
  auto bytes = encode_container(c);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path.string() + "' for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed for '" + path.string() + "'");
}

inline Container read_container(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_container(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template <class T>
Container to_container(const Tensor<T>& t) {
  Container c;
  c.dims = t.shape();
  if constexpr (std::is_same_v<T, float>) {
    c.dtype = DType::f32;
    for (float v : t.data()) detail::put_le<std::uint32_t>(c.payload, std::bit_cast<std::uint32_t>(v));
  } else if constexpr (std::is_same_v<T, double>) {
    c.dtype = DType::f64;
    for (double v : t.data()) detail::put_le<std::uint64_t>(c.payload, std::bit_cast<std::uint64_t>(v));
  } else {
    static_assert(sizeof(T) == 0, "unsupported scalar type");
  }
  return c;
}

inline Container u8_container(const Shape& dims, const std::vector<std::uint8_t>& values) {
  if (values.size() != numel(dims)) throw FormatError("u8 container: value count mismatch");
  return Container{DType::u8, dims, values};
}

/// Converts any stored dtype to T.
template <class T>
Tensor<T> from_container(const Container& c) {
  std::size_t n = numel(c.dims);
  std::vector<T> out(n);
  const std::uint8_t* p = c.payload.data();
  for (std::size_t i = 0; i < n; ++i) {
    switch (c.dtype) {
      case DType::f32: out[i] = static_cast<T>(std::bit_cast<float>(detail::get_le<std::uint32_t>(p + 4 * i))); break;
      case DType::f64: out[i] = static_cast<T>(std::bit_cast<double>(detail::get_le<std::uint64_t>(p + 8 * i))); break;
      case DType::u8: out[i] = static_cast<T>(p[i]); break;
    }
  }
  return Tensor<T>(c.dims, std::move(out));
}

template <class T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  write_container(path, to_container(t));
}

template <class T>
Tensor<T> read_tensor(const std::filesystem::path& path) {
  return from_container<T>(read_container(path));
}

// ---------------------------------------------------------------------------
// Datasets

enum class DataKind { static_input, events };

template <class T>
struct Dataset {
  DataKind kind = DataKind::static_input;
  Tensor<T> inputs;         // N x sample shape (events: N x T_raw x frame shape)
  std::vector<int> labels;  // empty when unlabeled

  std::size_t size() const { return inputs.ndim() ? inputs.dim(0) : 0; }
  bool labeled() const { return !labels.empty(); }

  /// Shape of one sample (events: one frame).
  Shape sample_shape() const {
    Shape s(inputs.shape().begin() + (kind == DataKind::events ? 2 : 1), inputs.shape().end());
    return s;
  }
  std::size_t raw_timesteps() const { return kind == DataKind::events ? inputs.dim(1) : 1; }

  std::size_t num_classes() const {
    return labels.empty() ? 0 : static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end()) + 1);
  }

  /// Whole sample i (events: T_raw x frame) without the batch axis.
  Tensor<T> sample(std::size_t i) const {
    if (i >= size()) throw Error("dataset index out of range");
    Shape s(inputs.shape().begin() + 1, inputs.shape().end());
    std::size_t per = numel(s);
    std::vector<T> v(inputs.values().begin() + static_cast<std::ptrdiff_t>(i * per),
                     inputs.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * per));
    return Tensor<T>(std::move(s), std::move(v));
  }

  void validate() const {
    if (size() == 0) throw Error("dataset is empty");
    if (kind == DataKind::events && (inputs.ndim() < 3 || inputs.dim(1) < 1)) {
      throw ShapeError("event dataset needs N x T_raw x frame inputs");
    }
    if (!labels.empty() && labels.size() != size()) throw Error("dataset: label count differs from sample count");
  }
};

template <class T>
Dataset<T> load_dataset(const std::filesystem::path& inputs, const std::optional<std::filesystem::path>& labels,
                        DataKind kind) {
  Dataset<T> d;
  d.kind = kind;
  d.inputs = read_tensor<T>(inputs);
  if (labels) {
    auto l = read_tensor<double>(*labels);
    if (l.ndim() != 1) throw FormatError("labels must be a 1-D container");
    for (double v : l.data()) {
      if (!(v >= 0) || v != std::floor(v) || v > 65535) throw FormatError("labels must be non-negative integers");
      d.labels.push_back(static_cast<int>(v));
    }
  }
  d.validate();
  return d;
}

template <class T>
void save_dataset(const Dataset<T>& d, const std::filesystem::path& inputs,
                  const std::optional<std::filesystem::path>& labels) {
  write_tensor(inputs, d.inputs);
  if (labels) {
    std::vector<std::uint8_t> l;
    for (int v : d.labels) {
      if (v < 0 || v > 255) throw FormatError("labels must fit in u8");
      l.push_back(static_cast<std::uint8_t>(v));
    }
    write_container(*labels, u8_container({l.size()}, l));
  }
}

/// Uniform subsampling of T_raw frames down to T: frame k takes raw index
/// ⌊(k + ½)·T_raw / T⌋.
template <class T>
std::vector<Tensor<T>> load_event_sequence(const Dataset<T>& d, std::size_t index, std::size_t timesteps) {
  if (d.kind != DataKind::events) throw Error("load_event_sequence: dataset is not an event dataset");
  std::size_t raw = d.raw_timesteps();
  if (timesteps == 0 || raw < timesteps) {
    throw Error("load_event_sequence: need T <= T_raw (T=" + std::to_string(timesteps) + ", T_raw=" +
                std::to_string(raw) + ")");
  }
  auto sample = d.sample(index);
  Shape frame = d.sample_shape();
  std::size_t per = numel(frame);
  std::vector<Tensor<T>> out;
  for (std::size_t k = 0; k < timesteps; ++k) {
    std::size_t src = (2 * k + 1) * raw / (2 * timesteps);
    std::vector<T> v(sample.values().begin() + static_cast<std::ptrdiff_t>(src * per),
                     sample.values().begin() + static_cast<std::ptrdiff_t>((src + 1) * per));
    out.emplace_back(frame, std::move(v));
  }
  return out;
}

/// Stacks equally shaped tensors along a new leading axis.
template <class T>
Tensor<T> stack(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw Error("stack: nothing to stack");
  Shape s = parts[0].shape();
  std::vector<T> v;
  v.reserve(parts.size() * parts[0].size());
  for (const auto& p : parts) {
    if (p.shape() != s) throw ShapeError("stack: " + to_string(p.shape()) + " vs " + to_string(s));
    v.insert(v.end(), p.values().begin(), p.values().end());
  }
  s.insert(s.begin(), parts.size());
  return Tensor<T>(std::move(s), std::move(v));
}

/// Unaugmented network input for the samples `indices`: static samples are
/// repeated over all timesteps, event samples are subsampled to `timesteps`.
template <class T>
std::vector<Tensor<T>> input_sequence(const Dataset<T>& d, const std::vector<std::size_t>& indices,
                                      std::size_t timesteps) {
  if (indices.empty()) throw Error("input_sequence: empty batch");
  if (d.kind == DataKind::static_input) {
    std::vector<Tensor<T>> samples;
    for (auto i : indices) samples.push_back(d.sample(i));
    return std::vector<Tensor<T>>(timesteps, stack(samples));
  }
  std::vector<std::vector<Tensor<T>>> per_t(timesteps);
  for (auto i : indices) {
    auto frames = load_event_sequence(d, i, timesteps);
    for (std::size_t t = 0; t < timesteps; ++t) per_t[t].push_back(std::move(frames[t]));
  }
  std::vector<Tensor<T>> out;
  for (auto& f : per_t) out.push_back(stack(f));
  return out;
}

/// Labeled Gaussian clusters around class means on the unit sphere. Sample i
/// belongs to class i mod n_classes.
template <class T>
Dataset<T> synth_clusters(std::size_t n_per_class, std::size_t n_classes, std::size_t dim, double spread,
                          std::uint64_t seed) {
  if (n_classes < 2 || dim < 2) throw Error("synth_clusters: need at least 2 classes and 2 dimensions");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> means(n_classes, std::vector<double>(dim));
  for (auto& m : means) {
    double norm = 0;
    for (auto& v : m) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : m) v /= norm;
  }
  std::size_t n = n_per_class * n_classes;
  std::vector<T> x(n * dim);
  Dataset<T> d;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = i % n_classes;
    for (std::size_t j = 0; j < dim; ++j) x[i * dim + j] = static_cast<T>(means[c][j] + spread * normal(rng));
    d.labels.push_back(static_cast<int>(c));
  }
  d.inputs = Tensor<T>({n, dim}, std::move(x));
  return d;
}

/// Small grayscale images (1 x size x size). Each class has a prototype made
/// of Gaussian blobs; samples are shifted, contrast-scaled, noisy copies.
template <class T>
Dataset<T> synth_patterns(std::size_t n_per_class, std::size_t n_classes, std::size_t size, double noise,
                          std::uint64_t seed) {
  if (n_classes < 2 || size < 8) throw Error("synth_patterns: need at least 2 classes and 8x8 images");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto s = static_cast<double>(size);
  std::vector<std::vector<double>> protos(n_classes, std::vector<double>(size * size, 0.0));
  for (auto& p : protos) {
    for (int blob = 0; blob < 3; ++blob) {
      double cy = 0.2 * s + 0.6 * s * unit(rng), cx = 0.2 * s + 0.6 * s * unit(rng);
      double sy = 0.05 * s + 0.1 * s * unit(rng), sx = 0.05 * s + 0.1 * s * unit(rng);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x) {
          double dy = (static_cast<double>(y) - cy) / sy, dx = (static_cast<double>(x) - cx) / sx;
          p[y * size + x] += std::exp(-0.5 * (dy * dy + dx * dx));
        }
    }
    double mx = *std::max_element(p.begin(), p.end());
    for (auto& v : p) v /= mx;
  }
  std::size_t n = n_per_class * n_classes;
  std::vector<T> x(n * size * size);
  std::uniform_int_distribution<int> shift(-2, 2);
  Dataset<T> d;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = i % n_classes;
    int dy = shift(rng), dx = shift(rng);
    double contrast = 0.7 + 0.6 * unit(rng);
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t xx = 0; xx < size; ++xx) {
        auto sy = static_cast<std::ptrdiff_t>(y) - dy, sx = static_cast<std::ptrdiff_t>(xx) - dx;
        double v = 0;
        if (sy >= 0 && sx >= 0 && sy < static_cast<std::ptrdiff_t>(size) && sx < static_cast<std::ptrdiff_t>(size)) {
          v = protos[c][static_cast<std::size_t>(sy) * size + static_cast<std::size_t>(sx)];
        }
        x[(i * size + y) * size + xx] = static_cast<T>(contrast * v + noise * normal(rng));
      }
    d.labels.push_back(static_cast<int>(c));
  }
  d.inputs = Tensor<T>({n, 1, size, size}, std::move(x));
  return d;
}

/// Event-frame sequences: a blob drifting in a class-specific direction,
/// emitted as binary frames with random flicker. Shape N x T_raw x 1 x size x size.
template <class T>
Dataset<T> synth_events(std::size_t n_per_class, std::size_t n_classes, std::size_t raw_timesteps, std::size_t size,
                        std::uint64_t seed) {
  if (n_classes < 2 || size < 8 || raw_timesteps < 1) throw Error("synth_events: invalid arguments");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double pi = std::acos(-1.0);
  std::size_t n = n_per_class * n_classes, frame = size * size;
  std::vector<T> x(n * raw_timesteps * frame, T(0));
  Dataset<T> d;
  d.kind = DataKind::events;
  const auto s = static_cast<double>(size);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = i % n_classes;
    double angle = 2 * pi * static_cast<double>(c) / static_cast<double>(n_classes);
    double y0 = s / 2 + (unit(rng) - 0.5) * s / 4, x0 = s / 2 + (unit(rng) - 0.5) * s / 4;
    double speed = s / (2.0 * static_cast<double>(raw_timesteps));
    for (std::size_t t = 0; t < raw_timesteps; ++t) {
      double cy = y0 + std::sin(angle) * speed * static_cast<double>(t);
      double cx = x0 + std::cos(angle) * speed * static_cast<double>(t);
      for (std::size_t y = 0; y < size; ++y)
        for (std::size_t xx = 0; xx < size; ++xx) {
          double dy = static_cast<double>(y) - cy, dx = static_cast<double>(xx) - cx;
          bool on = dy * dy + dx * dx <= s * s / 36 ? unit(rng) < 0.8 : unit(rng) < 0.02;
          x[((i * raw_timesteps + t) * frame) + y * size + xx] = on ? T(1) : T(0);
        }
    }
    d.labels.push_back(static_cast<int>(c));
  }
  d.inputs = Tensor<T>({n, raw_timesteps, 1, size, size}, std::move(x));
  return d;
}

// ---------------------------------------------------------------------------
// Named tensor sets (checkpoints): one container per tensor plus an index file
// listing "<group>\t<name>\t<file>".

template <class T>
void save_tensor_sets(const std::filesystem::path& dir, const std::map<std::string, const TensorMap<T>*>& groups) {
  std::filesystem::create_directories(dir);
  std::ofstream index(dir / "manifest.tsv", std::ios::trunc);
  if (!index) throw Error("cannot write manifest in '" + dir.string() + "'");
  for (const auto& [group, map] : groups) {
    for (const auto& [name, t] : *map) {
      std::string file = group + "." + name + ".snnt";
      write_tensor(dir / file, t);
      index << group << '\t' << name << '\t' << file << '\n';
    }
  }
}

template <class T>
std::map<std::string, TensorMap<T>> load_tensor_sets(const std::filesystem::path& dir) {
  std::ifstream index(dir / "manifest.tsv");
  if (!index) throw Error("no manifest.tsv in '" + dir.string() + "'");
  std::map<std::string, TensorMap<T>> out;
  std::string line;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    auto a = line.find('\t'), b = line.find('\t', a + 1);
    if (a == std::string::npos || b == std::string::npos) throw FormatError("malformed manifest line: " + line);
    out[line.substr(0, a)][line.substr(a + 1, b - a - 1)] = read_tensor<T>(dir / line.substr(b + 1));
  }
  return out;
}

}  // namespace snnssl
