#pragma once

// Datasets: synthetic generators, the IDX codec, and the native dataset file.
//
// Native dataset file (little-endian):
//   "PDAD" | u32 num_classes | images tensor record | labels tensor record
// where both records use the tensor format and labels are stored as f64
// class indices of shape [N].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pda/random.hpp"
#include "pda/tensor.hpp"
#include "pda/tensor_io.hpp"

namespace pda {

struct Dataset {
  Tensor images;  // [N, ...sample], values in [0,1]
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;
  std::string split;
  std::string provenance;

  std::size_t size() const noexcept { return labels.size(); }

  Shape sample_shape() const { return Shape(images.shape().begin() + 1, images.shape().end()); }

  void validate() const {
    if (labels.empty()) throw std::invalid_argument("dataset is empty");
    if (images.rank() < 2 || images.dim(0) != labels.size())
      throw ShapeError("dataset images " + to_string(images.shape()) + " do not match " +
                       std::to_string(labels.size()) + " labels");
    if (num_classes < 2) throw std::invalid_argument("dataset needs at least 2 classes");
    for (std::size_t y : labels)
      if (y >= num_classes) throw std::out_of_range("dataset label " + std::to_string(y) + " out of range");
    for (double v : images.data())
      if (!(v >= 0.0 && v <= 1.0)) throw std::out_of_range("dataset pixel outside [0,1]");
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset d{images.gather_rows(idx), {}, num_classes, split, provenance};
    d.labels.reserve(idx.size());
    for (std::size_t i : idx) d.labels.push_back(labels.at(i));
    return d;
  }

  Dataset head(std::size_t n) const {
    n = std::min(n, size());
    Dataset d{images.rows(0, n), {labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(n)}, num_classes, split,
              provenance};
    return d;
  }
};

/// Gaussian clusters in [0,1]^d. Class c is centred at 0.5 + 0.25*u_c, with
/// u_c spread on the unit circle of the first two axes (or along the single
/// axis when d == 1); per-coordinate noise has sigma = 0.5 / separation.
/// Labels cycle 0..classes-1, so class counts differ by at most one.
inline Dataset gen_blobs(std::size_t n, std::size_t d, std::size_t classes, double separation, std::uint64_t seed) {
  if (classes < 2 || n < classes || d < 1 || !(separation > 0.0))
    throw std::invalid_argument("gen_blobs: need n >= classes >= 2, d >= 1, separation > 0");
  const double sigma = 0.5 / separation;
  std::vector<std::vector<double>> centers(classes, std::vector<double>(d, 0.5));
  for (std::size_t c = 0; c < classes; ++c) {
    if (d == 1) {
      centers[c][0] += 0.25 * (-1.0 + 2.0 * static_cast<double>(c) / static_cast<double>(classes - 1));
    } else {
      const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
      centers[c][0] += 0.25 * std::cos(angle);
      centers[c][1] += 0.25 * std::sin(angle);
    }
  }
  Rng rng(derive_seed(seed, "blobs"));
  Dataset ds{Tensor(Shape{n, d}), std::vector<std::size_t>(n), classes, "", ""};
  auto x = ds.images.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    ds.labels[i] = c;
    for (std::size_t j = 0; j < d; ++j) x[i * d + j] = std::clamp(centers[c][j] + sigma * rng.normal(), 0.0, 1.0);
  }
  std::ostringstream prov;
  prov << "blobs:n=" << n << ",d=" << d << ",classes=" << classes << ",sep=" << separation << ",seed=" << seed;
  ds.provenance = prov.str();
  return ds;
}

enum class ShapeKind { square = 0, circle = 1, cross = 2, triangle = 3 };

/// Binary mask of a shape on a size x size grid, tested at pixel centres.
/// (cx, cy) is the centre and r the half-extent, in pixel units.
inline std::vector<double> render_shape(ShapeKind kind, double cx, double cy, double r, std::size_t size) {
  std::vector<double> mask(size * size, 0.0);
  for (std::size_t row = 0; row < size; ++row) {
    for (std::size_t col = 0; col < size; ++col) {
      const double px = static_cast<double>(col) + 0.5 - cx;
      const double py = static_cast<double>(row) + 0.5 - cy;
      bool in = false;
      switch (kind) {
        case ShapeKind::square:
          in = std::abs(px) <= r && std::abs(py) <= r;
          break;
        case ShapeKind::circle:
          in = px * px + py * py <= r * r;
          break;
        case ShapeKind::cross:
          in = (std::abs(px) <= r && std::abs(py) <= r / 3.0) || (std::abs(py) <= r && std::abs(px) <= r / 3.0);
          break;
        case ShapeKind::triangle:
          // apex at the top, base of half-width r at the bottom
          in = py >= -r && py <= r && std::abs(px) <= (py + r) / 2.0;
          break;
      }
      mask[row * size + col] = in ? 1.0 : 0.0;
    }
  }
  return mask;
}

struct ShapeStyle {
  double min_radius = 0.22;  // fractions of the image size
  double max_radius = 0.38;
  double min_contrast = 0.30;
  double max_contrast = 0.60;
  double noise = 0.03;
  double dark_fraction = 0.0;  // share of dark-on-light images
};

/// Grayscale [N,1,size,size] images of four jittered shapes on a random
/// background: label i % 4 in {square, circle, cross, triangle}.
inline Dataset gen_shapes(std::size_t n, std::size_t size, std::uint64_t seed, const ShapeStyle& style = {}) {
  if (size < 8) throw std::invalid_argument("gen_shapes: size must be >= 8");
  if (n < 1) throw std::invalid_argument("gen_shapes: n must be >= 1");
  Rng rng(derive_seed(seed, "shapes"));
  const double sz = static_cast<double>(size);
  Dataset ds{Tensor(Shape{n, 1, size, size}), std::vector<std::size_t>(n), 4, "", ""};
  auto x = ds.images.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    const auto kind = static_cast<ShapeKind>(i % 4);
    ds.labels[i] = i % 4;
    const double r = sz * rng.uniform(style.min_radius, style.max_radius);
    const double cx = rng.uniform(r, sz - r);
    const double cy = rng.uniform(r, sz - r);
    const double contrast = rng.uniform(style.min_contrast, style.max_contrast);
    const bool light = rng.uniform() >= style.dark_fraction;
    const double bg = light ? rng.uniform(0.1, 0.9 - contrast) : rng.uniform(0.1 + contrast, 0.9);
    const double fg = light ? bg + contrast : bg - contrast;
    const auto mask = render_shape(kind, cx, cy, r, size);
    for (std::size_t p = 0; p < size * size; ++p) {
      const double v = bg + (fg - bg) * mask[p] + style.noise * rng.normal();
      x[i * size * size + p] = std::clamp(v, 0.0, 1.0);
    }
  }
  ds.provenance = "shapes:n=" + std::to_string(n) + ",size=" + std::to_string(size) + ",seed=" + std::to_string(seed);
  return ds;
}

// ---- IDX codec -------------------------------------------------------------

/// Reads an IDX file with u8 payload; values are scaled to [0,1] unless
/// `scale` is false (label files).
inline Tensor read_idx(const std::filesystem::path& path, bool scale = true) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  if (bytes.size() < 4 || bytes[0] != 0 || bytes[1] != 0) throw FormatError("bad IDX magic in " + path.string());
  const unsigned dtype = bytes[2], rank = bytes[3];
  if (dtype != 0x08) throw FormatError("unsupported IDX dtype 0x" + std::to_string(dtype) + " (only u8 is supported)");
  if (rank == 0) throw FormatError("IDX rank 0");
  const std::size_t header = 4 + 4 * static_cast<std::size_t>(rank);
  if (bytes.size() < header) throw FormatError("truncated IDX header");
  Shape shape(rank);
  for (unsigned i = 0; i < rank; ++i) {
    const unsigned char* p = bytes.data() + 4 + 4 * i;
    shape[i] = (std::size_t{p[0]} << 24) | (std::size_t{p[1]} << 16) | (std::size_t{p[2]} << 8) | std::size_t{p[3]};
    if (shape[i] == 0) throw FormatError("zero IDX extent");
  }
  const std::size_t expected = header + numel(shape);
  if (bytes.size() != expected) {
    throw FormatError("IDX payload size mismatch: expected " + std::to_string(expected) + " bytes, got " +
                      std::to_string(bytes.size()));
  }
  std::vector<double> data(numel(shape));
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double v = bytes[header + i];
    data[i] = scale ? v / 255.0 : v;
  }
  return Tensor(std::move(shape), std::move(data));
}

inline void write_idx(const std::filesystem::path& path, const Shape& shape, std::span<const std::uint8_t> payload) {
  if (shape.empty() || shape.size() > 255 || numel(shape) != payload.size())
    throw std::invalid_argument("write_idx: payload does not match shape");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  const char magic[4] = {0, 0, 0x08, static_cast<char>(shape.size())};
  os.write(magic, 4);
  for (std::size_t e : shape) {
    const char be[4] = {static_cast<char>((e >> 24) & 0xff), static_cast<char>((e >> 16) & 0xff),
                        static_cast<char>((e >> 8) & 0xff), static_cast<char>(e & 0xff)};
    os.write(be, 4);
  }
  os.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
}

/// Writes [0,1] values as round(v * 255).
inline void write_idx(const std::filesystem::path& path, const Tensor& t) {
  std::vector<std::uint8_t> bytes(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(t[i], 0.0, 1.0) * 255.0));
  write_idx(path, t.shape(), bytes);
}

/// Image + label IDX pair. Rank-3 image files become [N,1,H,W].
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  Tensor images = read_idx(images_path);
  const Tensor labels = read_idx(labels_path, false);
  if (images.rank() == 3) images = Tensor(Shape{images.dim(0), 1, images.dim(1), images.dim(2)}, images.values());
  if (labels.rank() != 1 || labels.dim(0) != images.dim(0)) throw FormatError("IDX label count does not match images");
  Dataset ds{std::move(images), {}, 0, "", "idx:" + images_path.string()};
  for (double v : labels.data()) ds.labels.push_back(static_cast<std::size_t>(v));
  ds.num_classes = *std::max_element(ds.labels.begin(), ds.labels.end()) + 1;
  ds.num_classes = std::max<std::size_t>(ds.num_classes, 2);
  ds.validate();
  return ds;
}

// ---- native dataset file ---------------------------------------------------

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds) {
  ds.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os.write("PDAD", 4);
  detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ds.num_classes));
  write_tensor(os, ds.images);
  const Shape label_shape{ds.labels.size()};
  write_tensor(os, Tensor(label_shape, std::vector<double>(ds.labels.begin(), ds.labels.end())));
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open dataset " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || std::string_view(magic, 4) != "PDAD") throw FormatError("bad dataset magic in " + path.string());
  Dataset ds;
  ds.num_classes = detail::get_le<std::uint32_t>(is, "dataset class count");
  ds.images = read_tensor(is);
  const Tensor labels = read_tensor(is);
  for (double v : labels.data()) ds.labels.push_back(static_cast<std::size_t>(v));
  ds.provenance = path.string();
  ds.validate();
  return ds;
}

/// FNV-1a of a file's bytes, as 16 hex digits.
inline std::string file_checksum(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[4096];
  while (is.read(buf, sizeof buf) || is.gcount() > 0) {
    for (std::streamsize i = 0; i < is.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  char out[17];
  std::snprintf(out, sizeof out, "%016llx", static_cast<unsigned long long>(h));
  return out;
}

/// Resolves a dataset reference: a native file path, or one of
///   shapes:n=2000,size=16,seed=1
///   blobs:n=500,d=2,classes=2,sep=4,seed=1
///   idx:images=<path>,labels=<path>
inline Dataset open_dataset(const std::string& spec) {
  const auto colon = spec.find(':');
  const std::string scheme = colon == std::string::npos ? "" : spec.substr(0, colon);
  if (scheme != "shapes" && scheme != "blobs" && scheme != "idx") return load_dataset(spec);
  std::map<std::string, std::string> kv;
  std::stringstream ss(spec.substr(colon + 1));
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("malformed dataset option '" + item + "'");
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  auto take = [&](const std::string& key, const std::string& fallback) {
    auto it = kv.find(key);
    std::string v = it == kv.end() ? fallback : it->second;
    if (it != kv.end()) kv.erase(it);
    return v;
  };
  Dataset ds;
  if (scheme == "shapes") {
    ds = gen_shapes(std::stoul(take("n", "1000")), std::stoul(take("size", "16")), std::stoull(take("seed", "0")));
  } else if (scheme == "blobs") {
    ds = gen_blobs(std::stoul(take("n", "500")), std::stoul(take("d", "2")), std::stoul(take("classes", "2")),
                   std::stod(take("sep", "4")), std::stoull(take("seed", "0")));
  } else {
    ds = load_idx(take("images", ""), take("labels", ""));
  }
  if (!kv.empty()) throw std::invalid_argument("unknown dataset option '" + kv.begin()->first + "'");
  ds.validate();
  return ds;
}

}  // namespace pda
