#pragma once

// Interpretive instruments: Fourier-basis sensitivity heat maps, input
// gradient visualization, empirical probes of the logit perturbation bound
// and the generalization bound, and PGM/PPM writers.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pda/attacks.hpp"
#include "pda/data.hpp"
#include "pda/metrics.hpp"
#include "pda/nn.hpp"
#include "pda/random.hpp"

namespace pda {

// ---- Fourier probes --------------------------------------------------------

/// Unit-Frobenius real basis image for frequency (i, j):
/// cos(2*pi*(i*r/H + j*c/W)), normalized. Conjugate indices give the same image.
inline Tensor fourier_basis(std::size_t h, std::size_t w, std::size_t i, std::size_t j) {
  if (i >= h || j >= w)
    throw std::out_of_range("fourier index (" + std::to_string(i) + "," + std::to_string(j) + ") outside " +
                            std::to_string(h) + "x" + std::to_string(w));
  std::vector<double> u(h * w);
  double sq = 0.0;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double phase = 2.0 * std::numbers::pi *
                           (static_cast<double>(i * r) / static_cast<double>(h) + static_cast<double>(j * c) / static_cast<double>(w));
      u[r * w + c] = std::cos(phase);
      sq += u[r * w + c] * u[r * w + c];
    }
  const double inv = 1.0 / std::sqrt(sq);
  for (double& v : u) v *= inv;
  return Tensor(Shape{h, w}, std::move(u));
}

/// x + sign * r * |x|_2 * U, with U copied to every channel and scaled by
/// 1/sqrt(C) so the perturbation norm is exactly r * |x|_2. Not clipped.
inline Tensor fourier_perturb(const Tensor& image, const Tensor& basis, double r, double sign) {
  if (image.rank() != 3 || basis.rank() != 2 || image.dim(1) != basis.dim(0) || image.dim(2) != basis.dim(1))
    throw ShapeError("fourier_perturb: image " + to_string(image.shape()) + " vs basis " + to_string(basis.shape()));
  const std::size_t ch = image.dim(0), plane = basis.size();
  double sq = 0.0;
  for (double v : image.data()) sq += v * v;
  const double f = sign * r * std::sqrt(sq) / std::sqrt(static_cast<double>(ch));
  std::vector<double> out(image.values());
  for (std::size_t c = 0; c < ch; ++c)
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] += f * basis[p];
  return Tensor(image.shape(), std::move(out));
}

struct Heatmap {
  std::size_t h = 0, w = 0;
  std::vector<double> values;  // row-major error rates

  double at(std::size_t i, std::size_t j) const { return values.at(i * w + j); }
};

/// Error rate of `model` on `data` perturbed along each Fourier basis image,
/// with a random sign per image (seeded per cell).
inline Heatmap fourier_heatmap(const Model& model, const Dataset& data, double r, std::uint64_t seed) {
  if (data.images.rank() != 4) throw ShapeError("fourier_heatmap needs [N,C,H,W] images");
  if (!(r >= 0.0)) throw std::invalid_argument("fourier_heatmap: r must be >= 0");
  const std::size_t n = data.size(), h = data.images.dim(2), w = data.images.dim(3);
  const Shape one(data.images.shape().begin() + 1, data.images.shape().end());
  const std::size_t per = numel(one);
  Heatmap map{h, w, std::vector<double>(h * w)};
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      const Tensor u = fourier_basis(h, w, i, j);
      Rng rng(derive_seed(seed, i * w + j));
      std::vector<double> batch;
      batch.reserve(data.images.size());
      for (std::size_t k = 0; k < n; ++k) {
        const Tensor img(one, std::vector<double>(data.images.data().begin() + static_cast<std::ptrdiff_t>(k * per),
                                                  data.images.data().begin() + static_cast<std::ptrdiff_t>((k + 1) * per)));
        const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
        const Tensor moved = fourier_perturb(img, u, r, sign);
        for (double v : moved.data()) batch.push_back(std::clamp(v, 0.0, 1.0));
      }
      map.values[i * w + j] = error_rate(predict(model, Tensor(data.images.shape(), std::move(batch))), data.labels);
    }
  }
  return map;
}

// ---- gradient visualization ------------------------------------------------

/// Input gradient of the log-loss, min-max normalized to [0,1] per image; a
/// constant gradient maps to 0.5.
inline Tensor normalize_per_image(const Tensor& g) {
  const std::size_t n = g.dim(0), per = g.size() / n;
  std::vector<double> out(g.values());
  for (std::size_t r = 0; r < n; ++r) {
    const auto first = out.begin() + static_cast<std::ptrdiff_t>(r * per);
    const auto [lo, hi] = std::minmax_element(first, first + static_cast<std::ptrdiff_t>(per));
    const double a = *lo, span = *hi - *lo;
    for (auto it = first; it != first + static_cast<std::ptrdiff_t>(per); ++it) *it = span > 0 ? (*it - a) / span : 0.5;
  }
  return Tensor(g.shape(), std::move(out));
}

inline Tensor grad_visualization(const Model& model, const Tensor& x, std::span<const std::size_t> labels) {
  return normalize_per_image(input_gradient(model, x, labels));
}

// ---- image writers ---------------------------------------------------------

/// Binary PGM (P5); values are mapped linearly from [lo, hi] to 0..255.
inline void write_pgm(const std::filesystem::path& path, std::span<const double> values, std::size_t h, std::size_t w,
                      double lo = 0.0, double hi = 1.0) {
  if (values.size() != h * w) throw ShapeError("write_pgm: value count does not match " + std::to_string(h) + "x" + std::to_string(w));
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << w << ' ' << h << "\n255\n";
  const double span = hi - lo;
  for (double v : values) {
    const double t = span > 0 ? (v - lo) / span : 0.5;
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0))));
  }
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

/// Binary PPM (P6) from planar [3,H,W] values in [0,1].
inline void write_ppm(const std::filesystem::path& path, std::span<const double> planar, std::size_t h, std::size_t w) {
  if (planar.size() != 3 * h * w) throw ShapeError("write_ppm expects 3 planes");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P6\n" << w << ' ' << h << "\n255\n";
  for (std::size_t p = 0; p < h * w; ++p)
    for (std::size_t c = 0; c < 3; ++c)
      os.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(planar[c * h * w + p], 0.0, 1.0) * 255.0))));
  if (!os) throw std::runtime_error("write failed for " + path.string());
}

/// Lays a [N,C,H,W] batch out left to right and writes it as PPM when C == 3,
/// otherwise as PGM of the channel mean.
inline void write_image_strip(const std::filesystem::path& path, const Tensor& images) {
  if (images.rank() != 4) throw ShapeError("image strip needs [N,C,H,W]");
  const std::size_t n = images.dim(0), ch = images.dim(1), h = images.dim(2), w = images.dim(3);
  const std::size_t out_c = ch == 3 ? 3 : 1, width = n * w;
  std::vector<double> planar(out_c * h * width, 0.0);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t c = 0; c < ch; ++c)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t col = 0; col < w; ++col) {
          const double v = images[((k * ch + c) * h + r) * w + col];
          const std::size_t oc = out_c == 3 ? c : 0;
          planar[(oc * h + r) * width + k * w + col] += out_c == 3 ? v : v / static_cast<double>(ch);
        }
  if (out_c == 3)
    write_ppm(path, planar, h, width);
  else
    write_pgm(path, planar, h, width);
}

inline void write_heatmap(const std::filesystem::path& csv, const std::filesystem::path& pgm, const Heatmap& map) {
  std::ofstream os(csv);
  if (!os) throw std::runtime_error("cannot write " + csv.string());
  char buf[32];
  for (std::size_t i = 0; i < map.h; ++i) {
    for (std::size_t j = 0; j < map.w; ++j) {
      std::snprintf(buf, sizeof buf, "%.6f", map.at(i, j));
      os << (j ? "," : "") << buf;
    }
    os << '\n';
  }
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  write_pgm(pgm, map.values, map.h, map.w, *lo, *hi);
}

// ---- logit perturbation bound ----------------------------------------------

namespace logit {

inline Eigen::VectorXd softmax(const Eigen::VectorXd& z) {
  const Eigen::VectorXd e = (z.array() - z.maxCoeff()).exp();
  return e / e.sum();
}

inline double loss(const Eigen::VectorXd& z, std::size_t y) {
  const double mx = z.maxCoeff();
  return mx + std::log((z.array() - mx).exp().sum()) - z(static_cast<Eigen::Index>(y));
}

/// p - onehot(y)
inline Eigen::VectorXd gradient(const Eigen::VectorXd& z, std::size_t y) {
  Eigen::VectorXd g = softmax(z);
  g(static_cast<Eigen::Index>(y)) -= 1.0;
  return g;
}

/// diag(p) - p p^T
inline Eigen::MatrixXd hessian(const Eigen::VectorXd& z) {
  const Eigen::VectorXd p = softmax(z);
  Eigen::MatrixXd h = -p * p.transpose();
  h.diagonal() += p;
  return h;
}

inline double spectral_norm(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym, Eigen::EigenvaluesOnly);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline Eigen::MatrixXd pseudo_inverse(const Eigen::MatrixXd& sym) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  const Eigen::VectorXd ev = es.eigenvalues();
  const double tol = 1e-12 * std::max(1.0, ev.cwiseAbs().maxCoeff()) * static_cast<double>(ev.size());
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(ev.size());
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (std::abs(ev(i)) > tol) inv(i) = 1.0 / ev(i);
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace logit

struct BoundProbe {
  double radius = 1.0;       // search ball around z0; also the neighborhood U
  double slack = 1e-3;       // epsilon of the epsilon-maximizer
  std::size_t samples = 256;
  std::size_t ascent_steps = 100;
  std::uint64_t seed = 0;
};

struct Theorem1Result {
  double lhs = 0.0;  // |z* - z0|
  double rhs = std::numeric_limits<double>::infinity();
  double c = 0.0;
  double k = 0.0;
  double newton = 0.0;  // |H0^+ g0|
  bool c_ok = false;    // C >= 1e-9, so rhs is meaningful
  bool holds = false;
};

/// Checks |z* - z0| <= K/C + sqrt(eps/C) + |H0^+ g0| in logit space, with z*
/// the best point found by projected ascent and sampling in the ball.
inline Theorem1Result theorem1_check_logits(const Eigen::VectorXd& z0, std::size_t y, const BoundProbe& probe) {
  if (!(probe.radius > 0.0) || probe.samples < 1) throw std::invalid_argument("bound probe: need radius > 0 and samples >= 1");
  const auto m = z0.size();
  Rng rng(derive_seed(probe.seed, "theorem1"));
  auto sample_ball = [&] {
    Eigen::VectorXd d(m);
    for (Eigen::Index i = 0; i < m; ++i) d(i) = rng.normal();
    const double rad = probe.radius * std::pow(rng.uniform(), 1.0 / static_cast<double>(m));
    return Eigen::VectorXd(z0 + d.normalized() * rad);
  };
  auto project = [&](Eigen::VectorXd z) {
    const Eigen::VectorXd d = z - z0;
    if (d.norm() > probe.radius) z = z0 + d * (probe.radius / d.norm());
    return z;
  };

  const Eigen::VectorXd g0 = logit::gradient(z0, y);
  const Eigen::MatrixXd h0 = logit::hessian(z0);
  Theorem1Result r;
  r.c = std::numeric_limits<double>::infinity();
  Eigen::VectorXd best = z0;
  double best_val = logit::loss(z0, y);
  for (std::size_t s = 0; s < probe.samples; ++s) {
    const Eigen::VectorXd z = sample_ball();
    r.c = std::min(r.c, logit::spectral_norm(logit::hessian(z)));
    r.k = std::max(r.k, ((logit::gradient(z, y) - g0) - h0 * (z - z0)).norm());
    const double v = logit::loss(z, y);
    if (v > best_val) best_val = v, best = z;
  }
  Eigen::VectorXd z = z0;
  const double step = probe.radius / 20.0;
  for (std::size_t t = 0; t < probe.ascent_steps; ++t) {
    const Eigen::VectorXd g = logit::gradient(z, y);
    if (g.norm() < 1e-15) break;
    z = project(z + step * g.normalized());
    const double v = logit::loss(z, y);
    if (v > best_val) best_val = v, best = z;
  }
  r.lhs = (best - z0).norm();
  r.newton = (logit::pseudo_inverse(h0) * g0).norm();
  r.c_ok = r.c >= 1e-9;
  if (r.c_ok) {
    r.rhs = r.k / r.c + std::sqrt(probe.slack / r.c) + r.newton;
    r.holds = r.lhs <= r.rhs;
  }
  return r;
}

/// Same check anchored at the logits of a single input x0 ([1,...] or sample shape).
inline Theorem1Result theorem1_check(const Model& model, const Tensor& x0, std::size_t y0, const BoundProbe& probe) {
  Tensor x = x0;
  if (x.shape() == model.input_shape()) {
    Shape s{1};
    s.insert(s.end(), x.shape().begin(), x.shape().end());
    x = Tensor(s, x0.values());
  }
  const Tensor logits = model.forward(x);
  if (logits.dim(0) != 1) throw ShapeError("theorem1_check takes a single anchor");
  return theorem1_check_logits(Eigen::Map<const Eigen::VectorXd>(logits.data().data(), static_cast<Eigen::Index>(logits.size())),
                               y0, probe);
}

// ---- covering numbers and the generalization bound -------------------------

/// Greedy gamma-cover of the rows of `points`: repeatedly take the first
/// uncovered row as a centre and mark every row within distance gamma.
inline std::size_t covering_number(const Tensor& points, double gamma) {
  if (!(gamma > 0.0)) throw std::invalid_argument("covering_number: gamma must be > 0");
  const std::size_t n = points.dim(0), d = points.size() / n;
  std::vector<bool> covered(n, false);
  std::size_t centers = 0;
  for (std::size_t c = 0; c < n; ++c) {
    if (covered[c]) continue;
    ++centers;
    for (std::size_t i = 0; i < n; ++i) {
      if (covered[i]) continue;
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = points[i * d + j] - points[c * d + j];
        sq += diff * diff;
      }
      if (std::sqrt(sq) <= gamma) covered[i] = true;
    }
  }
  return centers;
}

struct Theorem2Inputs {
  double empirical_loss = 0.0;
  std::size_t n = 1;
  double gamma = 0.1;
  double lambda = 2.0;
  double m0 = 1.0, m1 = 1.0, l0 = 1.0, l1 = 1.0;
  double p = 0.05;
  std::size_t cover = 1;  // N(gamma/2)
};

struct Theorem2Terms {
  double cover_term = 0.0;       // gamma * (L0 + (2 M1 L1 + 1) / lambda)
  double concentration = 0.0;    // M0 * sqrt((2 N ln2 - 2 ln p) / n)
  double penalty = 0.0;          // M1^2 / (lambda - L1)
  double bound = 0.0;
};

inline Theorem2Terms theorem2_bound(const Theorem2Inputs& in) {
  if (!(in.lambda > in.l1)) throw std::domain_error("theorem2_bound: needs lambda > L1");
  if (!(in.p > 0.0 && in.p < 1.0)) throw std::invalid_argument("theorem2_bound: p must be in (0,1)");
  if (in.n < 1 || !(in.gamma > 0.0)) throw std::invalid_argument("theorem2_bound: need n >= 1 and gamma > 0");
  Theorem2Terms t;
  t.cover_term = in.gamma * (in.l0 + (2.0 * in.m1 * in.l1 + 1.0) / in.lambda);
  t.concentration = in.m0 * std::sqrt((2.0 * static_cast<double>(in.cover) * std::numbers::ln2 - 2.0 * std::log(in.p)) /
                                      static_cast<double>(in.n));
  t.penalty = in.m1 * in.m1 / (in.lambda - in.l1);
  t.bound = in.empirical_loss + t.cover_term + t.concentration + t.penalty;
  return t;
}

/// Bound with N(gamma/2) taken from a greedy cover of `points`.
inline Theorem2Terms theorem2_bound(Theorem2Inputs in, const Tensor& points) {
  in.cover = covering_number(points, in.gamma / 2.0);
  in.n = points.dim(0);
  return theorem2_bound(in);
}

struct BoundConstants {
  double m0 = 0.0;  // max loss
  double m1 = 0.0;  // max input-gradient norm
  double l0 = 0.0;  // max |l(x) - l(x')| / |x - x'|
  double l1 = 0.0;  // max |g(x) - g(x')| / |x - x'|
};

/// Empirical (not certified) constants from `pairs` random same-label pairs.
inline BoundConstants estimate_bound_constants(const Model& model, const Dataset& data, std::size_t pairs,
                                               std::uint64_t seed) {
  data.validate();
  Rng rng(derive_seed(seed, "bound-constants"));
  const std::size_t per = data.images.size() / data.size();
  BoundConstants k;
  constexpr std::size_t chunk = 256;
  for (std::size_t done = 0; done < pairs;) {
    const std::size_t b = std::min(chunk, pairs - done);
    std::vector<std::size_t> ia, ib;
    for (std::size_t t = 0; t < b; ++t) {
      const std::size_t i = rng.index(data.size());
      std::size_t j = rng.index(data.size());
      for (int tries = 0; data.labels[j] != data.labels[i] && tries < 64; ++tries) j = rng.index(data.size());
      ia.push_back(i);
      ib.push_back(j);
    }
    const Tensor xa = data.images.gather_rows(ia), xb = data.images.gather_rows(ib);
    std::vector<std::size_t> ya, yb;
    for (std::size_t t = 0; t < b; ++t) ya.push_back(data.labels[ia[t]]), yb.push_back(data.labels[ib[t]]);
    const LossGrad ga = loss_and_gradients(model, xa, ya, {.params = false, .input = true, .reduction = Reduction::sum});
    const LossGrad gb = loss_and_gradients(model, xb, yb, {.params = false, .input = true, .reduction = Reduction::sum});
    const std::size_t m = model.num_classes();
    auto row_loss = [&](const Tensor& logits, std::size_t r, std::size_t y) {
      const Eigen::Map<const Eigen::VectorXd> z(logits.data().data() + r * m, static_cast<Eigen::Index>(m));
      return logit::loss(z, y);
    };
    for (std::size_t t = 0; t < b; ++t) {
      const double la = row_loss(ga.logits, t, ya[t]), lb = row_loss(gb.logits, t, yb[t]);
      double dx = 0.0, dg = 0.0, na = 0.0;
      for (std::size_t j = 0; j < per; ++j) {
        const double ex = xa[t * per + j] - xb[t * per + j];
        const double eg = ga.input_grad[t * per + j] - gb.input_grad[t * per + j];
        dx += ex * ex;
        dg += eg * eg;
        na += ga.input_grad[t * per + j] * ga.input_grad[t * per + j];
      }
      k.m0 = std::max({k.m0, la, lb});
      k.m1 = std::max(k.m1, std::sqrt(na));
      if (dx > 1e-24) {
        k.l0 = std::max(k.l0, std::abs(la - lb) / std::sqrt(dx));
        k.l1 = std::max(k.l1, std::sqrt(dg) / std::sqrt(dx));
      }
    }
    done += b;
  }
  return k;
}

}  // namespace pda
