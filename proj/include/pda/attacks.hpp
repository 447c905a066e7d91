#pragma once

// White-box attacks: FGSM, PGD (L-inf and L2) and a simplified C&W-L2.
// All attacks work on batches, keep x' in [0,1], and are deterministic for a
// fixed seed.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pda/data.hpp"
#include "pda/nn.hpp"
#include "pda/random.hpp"

namespace pda {

enum class AttackFamily { fgsm, pgd, cw_l2 };
enum class Norm { l2, linf };

struct AttackSpec {
  AttackFamily family = AttackFamily::pgd;
  Norm norm = Norm::linf;
  double epsilon = 8.0 / 255.0;
  double step_size = 2.0 / 255.0;
  std::size_t steps = 20;
  double cw_c = 1.0;
  double cw_lr = 0.01;
  bool random_init = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(epsilon >= 0.0)) throw std::invalid_argument("attack epsilon must be >= 0");
    if (family == AttackFamily::fgsm) return;
    if (!(step_size > 0.0) && family == AttackFamily::pgd) throw std::invalid_argument("attack step size must be > 0");
    if (steps < 1) throw std::invalid_argument("attack steps must be >= 1");
    if (family == AttackFamily::cw_l2 && (!(cw_c >= 0.0) || !(cw_lr > 0.0)))
      throw std::invalid_argument("cw: need c >= 0 and lr > 0");
  }
};

inline AttackFamily parse_attack_family(const std::string& s) {
  if (s == "fgsm") return AttackFamily::fgsm;
  if (s == "pgd") return AttackFamily::pgd;
  if (s == "cw" || s == "cw_l2") return AttackFamily::cw_l2;
  throw std::invalid_argument("unknown attack '" + s + "'");
}

/// Per-example input gradient: row i is the gradient of the log-loss of
/// example i alone (the batch loss is summed, not averaged).
inline Tensor input_gradient(const Model& model, const Tensor& x, std::span<const std::size_t> labels) {
  return loss_and_gradients(model, x, labels, {.params = false, .input = true, .reduction = Reduction::sum}).input_grad;
}

inline Tensor fgsm(const Model& model, const Tensor& x, std::span<const std::size_t> labels, double epsilon) {
  if (epsilon == 0.0) return x.detach();
  const Tensor g = input_gradient(model, x, labels);
  std::vector<double> out(x.values());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
    out[i] = std::clamp(out[i] + epsilon * s, 0.0, 1.0);
  }
  return Tensor(x.shape(), std::move(out));
}

namespace detail {

// Pulls x_adv back into the epsilon-ball around x and into [0,1].
inline void project(std::vector<double>& x_adv, const Tensor& x, Norm norm, double epsilon) {
  const std::size_t n = x.dim(0), per = x.size() / n;
  for (std::size_t r = 0; r < n; ++r) {
    double* a = x_adv.data() + r * per;
    const double* o = x.data().data() + r * per;
    if (norm == Norm::linf) {
      for (std::size_t j = 0; j < per; ++j) a[j] = std::clamp(a[j], o[j] - epsilon, o[j] + epsilon);
    } else {
      double sq = 0.0;
      for (std::size_t j = 0; j < per; ++j) sq += (a[j] - o[j]) * (a[j] - o[j]);
      const double nrm = std::sqrt(sq);
      if (nrm > epsilon) {
        const double f = epsilon / nrm;
        for (std::size_t j = 0; j < per; ++j) a[j] = o[j] + (a[j] - o[j]) * f;
      }
    }
    // Coordinate clipping never moves a point away from x (x is in [0,1]).
    for (std::size_t j = 0; j < per; ++j) a[j] = std::clamp(a[j], 0.0, 1.0);
  }
}

inline void random_start(std::vector<double>& x_adv, std::size_t n, Norm norm, double epsilon, Rng& rng) {
  const std::size_t per = x_adv.size() / n;
  for (std::size_t r = 0; r < n; ++r) {
    double* a = x_adv.data() + r * per;
    if (norm == Norm::linf) {
      for (std::size_t j = 0; j < per; ++j) a[j] += rng.uniform(-epsilon, epsilon);
    } else {
      std::vector<double> dir(per);
      double sq = 0.0;
      for (double& v : dir) {
        v = rng.normal();
        sq += v * v;
      }
      const double radius = epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(per)) / std::sqrt(sq);
      for (std::size_t j = 0; j < per; ++j) a[j] += dir[j] * radius;
    }
  }
}

}  // namespace detail

/// Projected gradient ascent on the log-loss: `steps` iterations of
/// alpha*sign(g) (L-inf) or alpha*g/|g| (L2), each followed by projection.
inline Tensor pgd_attack(const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                         const AttackSpec& spec) {
  spec.validate();
  const std::size_t n = x.dim(0), per = x.size() / n;
  std::vector<double> adv(x.values());
  if (spec.random_init && spec.epsilon > 0.0) {
    Rng rng(derive_seed(spec.seed, "pgd-start"));
    detail::random_start(adv, n, spec.norm, spec.epsilon, rng);
    detail::project(adv, x, spec.norm, spec.epsilon);
  }
  for (std::size_t step = 0; step < spec.steps; ++step) {
    const Tensor g = input_gradient(model, Tensor(x.shape(), adv), labels);
    if (spec.norm == Norm::linf) {
      for (std::size_t i = 0; i < adv.size(); ++i) {
        const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
        adv[i] += spec.step_size * s;
      }
    } else {
      const auto norms = row_norms(g);
      for (std::size_t r = 0; r < n; ++r) {
        if (norms[r] < 1e-12) continue;
        const double f = spec.step_size / norms[r];
        for (std::size_t j = 0; j < per; ++j) adv[r * per + j] += f * g[r * per + j];
      }
    }
    detail::project(adv, x, spec.norm, spec.epsilon);
  }
  return Tensor(x.shape(), std::move(adv));
}

/// Simplified Carlini-Wagner L2: gradient descent on
///   |delta|^2 + c * max(z_y - max_{i != y} z_i, 0)
/// with direct clipping to [0,1]; each example keeps its best iterate.
inline Tensor cw_l2(const Model& model, const Tensor& x, std::span<const std::size_t> labels, double c,
                    std::size_t steps, double lr) {
  if (!(c >= 0.0)) throw std::invalid_argument("cw_l2: c must be >= 0");
  const std::size_t n = x.dim(0), per = x.size() / n, m = model.num_classes();
  std::vector<double> delta(x.size(), 0.0);
  std::vector<double> best(x.values());
  std::vector<double> best_obj(n, std::numeric_limits<double>::infinity());

  for (std::size_t it = 0;; ++it) {
    std::vector<double> cur(x.size());
    for (std::size_t i = 0; i < cur.size(); ++i) cur[i] = x[i] + delta[i];
    Tape tape;
    const Tensor xin = tape.watch(Tensor(x.shape(), cur));
    const Tensor logits = model.forward(xin);
    Tensor weights(Shape{n, m});
    auto w = weights.mutable_data();
    std::vector<bool> active(n, false);
    for (std::size_t r = 0; r < n; ++r) {
      const double* z = logits.data().data() + r * m;
      const std::size_t y = labels[r];
      std::size_t other = y == 0 ? 1 : 0;
      for (std::size_t j = 0; j < m; ++j)
        if (j != y && z[j] > z[other]) other = j;
      const double margin = z[y] - z[other];
      double sq = 0.0;
      for (std::size_t j = 0; j < per; ++j) sq += delta[r * per + j] * delta[r * per + j];
      const double obj = sq + c * std::max(margin, 0.0);
      if (obj < best_obj[r]) {
        best_obj[r] = obj;
        std::copy(cur.begin() + static_cast<std::ptrdiff_t>(r * per), cur.begin() + static_cast<std::ptrdiff_t>((r + 1) * per),
                  best.begin() + static_cast<std::ptrdiff_t>(r * per));
      }
      if (margin > 0.0) {
        active[r] = true;
        w[r * m + y] = 1.0;
        w[r * m + other] = -1.0;
      }
    }
    if (it == steps) break;
    const Tensor g = tape.backward(sum(mul(logits, weights))).of(xin);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t j = 0; j < per; ++j) {
        const std::size_t i = r * per + j;
        const double grad = 2.0 * delta[i] + (active[r] ? c * g[i] : 0.0);
        delta[i] = std::clamp(x[i] + delta[i] - lr * grad, 0.0, 1.0) - x[i];
      }
    }
  }
  return Tensor(x.shape(), std::move(best));
}

inline Tensor run_attack(const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                         const AttackSpec& spec) {
  spec.validate();
  switch (spec.family) {
    case AttackFamily::fgsm:
      return fgsm(model, x, labels, spec.epsilon);
    case AttackFamily::pgd:
      return pgd_attack(model, x, labels, spec);
    case AttackFamily::cw_l2:
      return cw_l2(model, x, labels, spec.cw_c, spec.steps, spec.cw_lr);
  }
  return x;
}

/// Attacks a whole dataset in batches; batch b uses seed derive_seed(seed, b).
inline Tensor attack_dataset(const Model& model, const Dataset& data, const AttackSpec& spec, std::size_t batch = 250) {
  std::vector<double> out;
  out.reserve(data.images.size());
  for (std::size_t b = 0, idx = 0; b < data.size(); b += batch, ++idx) {
    const std::size_t e = std::min(data.size(), b + batch);
    AttackSpec s = spec;
    s.seed = derive_seed(spec.seed, idx);
    const Tensor adv = run_attack(model, data.images.rows(b, e),
                                  std::span<const std::size_t>(data.labels).subspan(b, e - b), s);
    out.insert(out.end(), adv.data().begin(), adv.data().end());
  }
  return Tensor(data.images.shape(), std::move(out));
}

}  // namespace pda
