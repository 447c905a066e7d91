#pragma once

// Twelve procedural image corruptions at five severities, and the on-disk
// suite built from them. Images are [C,H,W] in [0,1]; every kind keeps the
// shape and clips its output to [0,1].
//
// Stochastic kinds draw from a stream keyed by (seed, kind, image index) only,
// so the noise pattern of an image is shared across severities and does not
// depend on where the image sits in a dataset.

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "pda/data.hpp"
#include "pda/random.hpp"
#include "pda/tensor.hpp"

namespace pda {

enum class Corruption {
  gaussian_noise,
  shot_noise,
  impulse_noise,
  defocus_blur,
  motion_blur,
  zoom_blur,
  brightness,
  fog,
  contrast,
  elastic,
  pixelate,
  jpeg,
};

inline constexpr std::array<Corruption, 12> kAllCorruptions = {
    Corruption::gaussian_noise, Corruption::shot_noise, Corruption::impulse_noise, Corruption::defocus_blur,
    Corruption::motion_blur,    Corruption::zoom_blur,  Corruption::brightness,    Corruption::fog,
    Corruption::contrast,       Corruption::elastic,    Corruption::pixelate,      Corruption::jpeg,
};

inline const char* to_string(Corruption c) {
  switch (c) {
    case Corruption::gaussian_noise: return "gaussian_noise";
    case Corruption::shot_noise: return "shot_noise";
    case Corruption::impulse_noise: return "impulse_noise";
    case Corruption::defocus_blur: return "defocus_blur";
    case Corruption::motion_blur: return "motion_blur";
    case Corruption::zoom_blur: return "zoom_blur";
    case Corruption::brightness: return "brightness";
    case Corruption::fog: return "fog";
    case Corruption::contrast: return "contrast";
    case Corruption::elastic: return "elastic";
    case Corruption::pixelate: return "pixelate";
    case Corruption::jpeg: return "jpeg";
  }
  return "?";
}

inline Corruption parse_corruption(const std::string& s) {
  for (Corruption c : kAllCorruptions)
    if (s == to_string(c)) return c;
  throw std::invalid_argument("unknown corruption '" + s + "'");
}

/// Severity parameter for s = 1..5.
inline double severity_parameter(Corruption c, int severity) {
  if (severity < 1 || severity > 5) throw std::out_of_range("severity must be in 1..5, got " + std::to_string(severity));
  static const std::array<std::array<double, 5>, 12> table = {{
      {0.04, 0.06, 0.08, 0.10, 0.14},       // gaussian sigma
      {60, 25, 12, 5, 3},                   // shot photon scale
      {0.03, 0.06, 0.09, 0.17, 0.27},       // impulse fraction
      {1, 2, 3, 4, 6},                      // defocus disk radius (px)
      {3, 5, 7, 9, 11},                     // motion length (px)
      {1.06, 1.11, 1.16, 1.21, 1.26},       // zoom max factor
      {0.1, 0.2, 0.3, 0.4, 0.5},            // brightness delta
      {0.15, 0.25, 0.35, 0.45, 0.55},       // fog blend
      {0.75, 0.5, 0.4, 0.3, 0.15},          // contrast factor
      {1, 2, 3, 4, 6},                      // elastic magnitude (px)
      {0.9, 0.8, 0.7, 0.6, 0.4},            // pixelate scale
      {25, 18, 15, 10, 7},                  // jpeg quality
  }};
  return table[static_cast<std::size_t>(c)][static_cast<std::size_t>(severity - 1)];
}

inline bool is_stochastic(Corruption c) {
  return c == Corruption::gaussian_noise || c == Corruption::shot_noise || c == Corruption::impulse_noise ||
         c == Corruption::fog || c == Corruption::elastic;
}

struct CorruptionSpec {
  Corruption kind = Corruption::gaussian_noise;
  int severity = 1;
  std::uint64_t seed = 0;
  std::optional<double> parameter;  // overrides the severity table (diagnostics)

  double value() const { return parameter ? *parameter : severity_parameter(kind, severity); }
};

namespace detail {

// One [H,W] plane with replicate-border sampling.
struct Plane {
  const double* p;
  std::size_t h, w;

  double at(std::ptrdiff_t r, std::ptrdiff_t c) const {
    r = std::clamp<std::ptrdiff_t>(r, 0, static_cast<std::ptrdiff_t>(h) - 1);
    c = std::clamp<std::ptrdiff_t>(c, 0, static_cast<std::ptrdiff_t>(w) - 1);
    return p[static_cast<std::size_t>(r) * w + static_cast<std::size_t>(c)];
  }

  double bilinear(double r, double c) const {
    const double r0 = std::floor(r), c0 = std::floor(c);
    const double fr = r - r0, fc = c - c0;
    const auto ir = static_cast<std::ptrdiff_t>(r0), ic = static_cast<std::ptrdiff_t>(c0);
    return (1 - fr) * ((1 - fc) * at(ir, ic) + fc * at(ir, ic + 1)) +
           fr * ((1 - fc) * at(ir + 1, ic) + fc * at(ir + 1, ic + 1));
  }
};

struct Tap {
  std::ptrdiff_t dr, dc;
  double w;
};

inline void convolve(const double* in, double* out, std::size_t h, std::size_t w, const std::vector<Tap>& taps) {
  const Plane src{in, h, w};
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      for (const Tap& t : taps)
        acc += t.w * src.at(static_cast<std::ptrdiff_t>(r) + t.dr, static_cast<std::ptrdiff_t>(c) + t.dc);
      out[r * w + c] = acc;
    }
}

inline std::vector<Tap> disk_taps(double radius) {
  std::vector<Tap> taps;
  const auto R = static_cast<std::ptrdiff_t>(std::ceil(radius));
  for (std::ptrdiff_t dr = -R; dr <= R; ++dr)
    for (std::ptrdiff_t dc = -R; dc <= R; ++dc)
      if (static_cast<double>(dr * dr + dc * dc) <= radius * radius) taps.push_back({dr, dc, 1.0});
  for (Tap& t : taps) t.w = 1.0 / static_cast<double>(taps.size());
  return taps;
}

// Line of `length` taps along the 45 degree diagonal, centred on the pixel.
inline std::vector<Tap> motion_taps(double length) {
  const auto n = static_cast<std::ptrdiff_t>(std::lround(length));
  std::vector<Tap> taps;
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const std::ptrdiff_t t = i - (n - 1) / 2;
    taps.push_back({-t, t, 1.0 / static_cast<double>(n)});
  }
  return taps;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const auto R = static_cast<std::ptrdiff_t>(std::ceil(3.0 * sigma));
  std::vector<double> k;
  double total = 0.0;
  for (std::ptrdiff_t i = -R; i <= R; ++i) {
    k.push_back(std::exp(-0.5 * static_cast<double>(i * i) / (sigma * sigma)));
    total += k.back();
  }
  for (double& v : k) v /= total;
  return k;
}

inline std::vector<double> smooth(const std::vector<double>& in, std::size_t h, std::size_t w, double sigma) {
  const auto k = gaussian_kernel(sigma);
  const auto R = static_cast<std::ptrdiff_t>(k.size() / 2);
  std::vector<Tap> row, col;
  for (std::ptrdiff_t i = -R; i <= R; ++i) {
    row.push_back({0, i, k[static_cast<std::size_t>(i + R)]});
    col.push_back({i, 0, k[static_cast<std::size_t>(i + R)]});
  }
  std::vector<double> tmp(in.size()), out(in.size());
  convolve(in.data(), tmp.data(), h, w, row);
  convolve(tmp.data(), out.data(), h, w, col);
  return out;
}

// Diamond-square fractal noise cropped to h x w and rescaled to [0,1].
inline std::vector<double> plasma(std::size_t h, std::size_t w, Rng& rng, double roughness = 0.5) {
  std::size_t n = 1;
  while (n + 1 < std::max(h, w)) n *= 2;
  const std::size_t size = n + 1;
  std::vector<double> g(size * size, 0.0);
  auto at = [&](std::size_t r, std::size_t c) -> double& { return g[(r % size) * size + (c % size)]; };
  double amp = 1.0;
  at(0, 0) = rng.uniform(-amp, amp);
  at(0, n) = rng.uniform(-amp, amp);
  at(n, 0) = rng.uniform(-amp, amp);
  at(n, n) = rng.uniform(-amp, amp);
  for (std::size_t step = n; step > 1; step /= 2) {
    const std::size_t half = step / 2;
    amp *= roughness;
    for (std::size_t r = half; r < size; r += step)
      for (std::size_t c = half; c < size; c += step)
        at(r, c) = 0.25 * (at(r - half, c - half) + at(r - half, c + half) + at(r + half, c - half) +
                           at(r + half, c + half)) +
                   rng.uniform(-amp, amp);
    for (std::size_t r = 0; r < size; r += half) {
      for (std::size_t c = (r / half) % 2 == 0 ? half : 0; c < size; c += step) {
        double acc = 0.0;
        int cnt = 0;
        if (r >= half) acc += at(r - half, c), ++cnt;
        if (r + half < size) acc += at(r + half, c), ++cnt;
        if (c >= half) acc += at(r, c - half), ++cnt;
        if (c + half < size) acc += at(r, c + half), ++cnt;
        at(r, c) = acc / cnt + rng.uniform(-amp, amp);
      }
    }
  }
  std::vector<double> out(h * w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) out[r * w + c] = g[r * size + c];
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  const double a = *lo, span = *hi - *lo;
  for (double& v : out) v = span > 0 ? (v - a) / span : 0.5;
  return out;
}

inline double poisson_sample(Rng& rng, double rate) { return static_cast<double>(rng.poisson(rate)); }

// IJG luminance quantization table.
inline constexpr std::array<int, 64> kJpegLuma = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24, 40,  57,
    69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35, 55, 64,
    81, 104, 113, 92, 49, 64,  78,  87,  103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
};

inline void jpeg_plane(double* p, std::size_t h, std::size_t w, double quality) {
  const double s = quality < 50 ? 5000.0 / quality : 200.0 - 2.0 * quality;
  std::array<double, 64> q;
  for (std::size_t i = 0; i < 64; ++i) q[i] = std::max(1.0, std::floor((kJpegLuma[i] * s + 50.0) / 100.0));
  std::array<std::array<double, 8>, 8> basis;
  for (std::size_t u = 0; u < 8; ++u)
    for (std::size_t x = 0; x < 8; ++x)
      basis[u][x] = (u == 0 ? std::sqrt(0.125) : 0.5) * std::cos((2.0 * x + 1.0) * u * std::numbers::pi / 16.0);

  const Plane src{p, h, w};
  std::vector<double> out(h * w);
  for (std::size_t br = 0; br < h; br += 8) {
    for (std::size_t bc = 0; bc < w; bc += 8) {
      double block[8][8], coef[8][8], tmp[8][8];
      for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t c = 0; c < 8; ++c)
          block[r][c] = 255.0 * src.at(static_cast<std::ptrdiff_t>(br + r), static_cast<std::ptrdiff_t>(bc + c)) - 128.0;
      for (std::size_t u = 0; u < 8; ++u)
        for (std::size_t c = 0; c < 8; ++c) {
          double acc = 0.0;
          for (std::size_t r = 0; r < 8; ++r) acc += basis[u][r] * block[r][c];
          tmp[u][c] = acc;
        }
      for (std::size_t u = 0; u < 8; ++u)
        for (std::size_t v = 0; v < 8; ++v) {
          double acc = 0.0;
          for (std::size_t c = 0; c < 8; ++c) acc += tmp[u][c] * basis[v][c];
          coef[u][v] = std::round(acc / q[u * 8 + v]) * q[u * 8 + v];
        }
      for (std::size_t r = 0; r < 8; ++r)
        for (std::size_t v = 0; v < 8; ++v) {
          double acc = 0.0;
          for (std::size_t u = 0; u < 8; ++u) acc += basis[u][r] * coef[u][v];
          tmp[r][v] = acc;
        }
      for (std::size_t r = 0; r < 8 && br + r < h; ++r)
        for (std::size_t c = 0; c < 8 && bc + c < w; ++c) {
          double acc = 0.0;
          for (std::size_t v = 0; v < 8; ++v) acc += tmp[r][v] * basis[v][c];
          out[(br + r) * w + bc + c] = (acc + 128.0) / 255.0;
        }
    }
  }
  std::copy(out.begin(), out.end(), p);
}

}  // namespace detail

/// Corrupts one [C,H,W] image. `index` is the image's position in its source
/// dataset and only feeds the noise stream.
inline Tensor corrupt(const Tensor& image, const CorruptionSpec& spec, std::uint64_t index = 0) {
  if (image.rank() != 3) throw ShapeError("corrupt expects a [C,H,W] image, got " + to_string(image.shape()));
  const double v = spec.value();
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2), plane = h * w;
  Rng rng(derive_seed(derive_seed(spec.seed, to_string(spec.kind)), index));
  std::vector<double> x(image.values());

  switch (spec.kind) {
    case Corruption::gaussian_noise:
      for (double& p : x) p += v * rng.normal();
      break;
    case Corruption::shot_noise:
      for (double& p : x) p = detail::poisson_sample(rng, std::max(p, 0.0) * v) / v;
      break;
    case Corruption::impulse_noise:
      for (double& p : x) {
        const double u = rng.uniform();
        const double salt = rng.uniform();
        if (u < v) p = salt < 0.5 ? 0.0 : 1.0;
      }
      break;
    case Corruption::defocus_blur:
    case Corruption::motion_blur: {
      const auto taps = spec.kind == Corruption::defocus_blur ? detail::disk_taps(v) : detail::motion_taps(v);
      for (std::size_t c = 0; c < ch; ++c)
        detail::convolve(image.data().data() + c * plane, x.data() + c * plane, h, w, taps);
      break;
    }
    case Corruption::zoom_blur: {
      const double cr = (static_cast<double>(h) - 1) / 2, cc = (static_cast<double>(w) - 1) / 2;
      constexpr int scales = 4;
      for (std::size_t c = 0; c < ch; ++c) {
        const detail::Plane src{image.data().data() + c * plane, h, w};
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t col = 0; col < w; ++col) {
            double acc = src.at(static_cast<std::ptrdiff_t>(r), static_cast<std::ptrdiff_t>(col));
            for (int s = 1; s <= scales; ++s) {
              const double z = 1.0 + (v - 1.0) * s / scales;
              acc += src.bilinear(cr + (static_cast<double>(r) - cr) / z, cc + (static_cast<double>(col) - cc) / z);
            }
            x[c * plane + r * w + col] = acc / (scales + 1);
          }
      }
      break;
    }
    case Corruption::brightness:
      for (double& p : x) p += v;
      break;
    case Corruption::fog: {
      const auto fog = detail::plasma(h, w, rng);
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t i = 0; i < plane; ++i) x[c * plane + i] = (1 - v) * x[c * plane + i] + v * fog[i];
      break;
    }
    case Corruption::contrast:
      for (double& p : x) p = (p - 0.5) * v + 0.5;
      break;
    case Corruption::elastic: {
      std::vector<double> dy(plane), dx(plane);
      for (std::size_t i = 0; i < plane; ++i) {
        dy[i] = rng.uniform(-1.0, 1.0);
        dx[i] = rng.uniform(-1.0, 1.0);
      }
      const double sigma = std::max(1.0, static_cast<double>(std::max(h, w)) / 8.0);
      dy = detail::smooth(dy, h, w, sigma);
      dx = detail::smooth(dx, h, w, sigma);
      double peak = 0.0;
      for (std::size_t i = 0; i < plane; ++i) peak = std::max({peak, std::abs(dy[i]), std::abs(dx[i])});
      const double f = peak > 0 ? v / peak : 0.0;
      for (std::size_t c = 0; c < ch; ++c) {
        const detail::Plane src{image.data().data() + c * plane, h, w};
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t col = 0; col < w; ++col) {
            const std::size_t i = r * w + col;
            x[c * plane + i] = src.bilinear(static_cast<double>(r) + f * dy[i], static_cast<double>(col) + f * dx[i]);
          }
      }
      break;
    }
    case Corruption::pixelate: {
      const std::size_t sh = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(v * static_cast<double>(h))));
      const std::size_t sw = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(v * static_cast<double>(w))));
      for (std::size_t c = 0; c < ch; ++c) {
        const double* src = image.data().data() + c * plane;
        // box-average into each coarse cell, then paint it back
        std::vector<double> sum(sh * sw, 0.0), cnt(sh * sw, 0.0);
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t col = 0; col < w; ++col) {
            const std::size_t cell = (r * sh / h) * sw + col * sw / w;
            sum[cell] += src[r * w + col];
            cnt[cell] += 1.0;
          }
        for (std::size_t r = 0; r < h; ++r)
          for (std::size_t col = 0; col < w; ++col) {
            const std::size_t cell = (r * sh / h) * sw + col * sw / w;
            x[c * plane + r * w + col] = sum[cell] / cnt[cell];
          }
      }
      break;
    }
    case Corruption::jpeg:
      for (std::size_t c = 0; c < ch; ++c) detail::jpeg_plane(x.data() + c * plane, h, w, v);
      break;
  }
  for (double& p : x) p = std::clamp(p, 0.0, 1.0);
  return Tensor(image.shape(), std::move(x));
}

/// Corrupts every image of a [N,C,H,W] dataset; labels are kept.
inline Dataset corrupt_dataset(const Dataset& ds, const CorruptionSpec& spec) {
  if (ds.images.rank() != 4) throw ShapeError("corruptions need [N,C,H,W] images, got " + to_string(ds.images.shape()));
  const Shape one(ds.images.shape().begin() + 1, ds.images.shape().end());
  std::vector<double> out;
  out.reserve(ds.images.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Tensor img = corrupt(Tensor(one, ds.images.rows(i, i + 1).values()), spec, i);
    out.insert(out.end(), img.data().begin(), img.data().end());
  }
  Dataset r = ds;
  r.images = Tensor(ds.images.shape(), std::move(out));
  r.split = std::string(to_string(spec.kind)) + "-" + std::to_string(spec.severity);
  return r;
}

struct SuiteEntry {
  Corruption kind;
  int severity;
  double parameter;
  std::size_t count;
  std::string checksum;
};

struct SuiteManifest {
  std::vector<SuiteEntry> entries;
};

inline std::filesystem::path suite_path(const std::filesystem::path& dir, Corruption kind, int severity) {
  return dir / to_string(kind) / std::to_string(severity) / "data.bin";
}

/// Writes <out>/<kind>/<severity>/data.bin for every kind and severity,
/// <out>/clean.bin, and <out>/manifest.txt.
inline SuiteManifest build_corruption_suite(const Dataset& ds, const std::vector<Corruption>& kinds, std::uint64_t seed,
                                            const std::filesystem::path& out) {
  ds.validate();
  if (kinds.empty()) throw std::invalid_argument("corruption suite needs at least one kind");
  std::filesystem::create_directories(out);
  save_dataset(out / "clean.bin", ds);
  SuiteManifest m;
  for (Corruption kind : kinds) {
    for (int s = 1; s <= 5; ++s) {
      const CorruptionSpec spec{kind, s, seed, std::nullopt};
      const auto path = suite_path(out, kind, s);
      std::filesystem::create_directories(path.parent_path());
      save_dataset(path, corrupt_dataset(ds, spec));
      m.entries.push_back({kind, s, spec.value(), ds.size(), file_checksum(path)});
    }
  }
  std::ofstream mf(out / "manifest.txt");
  if (!mf) throw std::runtime_error("cannot write " + (out / "manifest.txt").string());
  mf << "# kind severity parameter count checksum\n";
  for (const auto& e : m.entries)
    mf << to_string(e.kind) << ' ' << e.severity << ' ' << e.parameter << ' ' << e.count << ' ' << e.checksum << '\n';
  if (!mf) throw std::runtime_error("write failed for " + (out / "manifest.txt").string());
  return m;
}

inline SuiteManifest read_suite_manifest(const std::filesystem::path& dir) {
  std::ifstream is(dir / "manifest.txt");
  if (!is) throw std::runtime_error("no manifest.txt in " + dir.string());
  SuiteManifest m;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string kind;
    SuiteEntry e{};
    if (!(ls >> kind >> e.severity >> e.parameter >> e.count >> e.checksum))
      throw FormatError("malformed manifest line: " + line);
    e.kind = parse_corruption(kind);
    m.entries.push_back(e);
  }
  if (m.entries.empty()) throw FormatError("empty manifest in " + dir.string());
  return m;
}

/// One corrupted copy of `ds` where image i gets kind i mod |kinds| and
/// severity 1 + (i / |kinds|) mod 5, so kinds and severities are spread evenly.
inline Dataset mixed_corruption_set(const Dataset& ds, std::uint64_t seed,
                                    const std::vector<Corruption>& kinds = {kAllCorruptions.begin(),
                                                                            kAllCorruptions.end()}) {
  if (ds.images.rank() != 4) throw ShapeError("corruptions need [N,C,H,W] images");
  const Shape one(ds.images.shape().begin() + 1, ds.images.shape().end());
  std::vector<double> out;
  out.reserve(ds.images.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const CorruptionSpec spec{kinds[i % kinds.size()], static_cast<int>(1 + (i / kinds.size()) % 5), seed,
                              std::nullopt};
    const Tensor img = corrupt(Tensor(one, ds.images.rows(i, i + 1).values()), spec, i);
    out.insert(out.end(), img.data().begin(), img.data().end());
  }
  Dataset r = ds;
  r.images = Tensor(ds.images.shape(), std::move(out));
  r.split = "mixed-corruption";
  return r;
}

}  // namespace pda
