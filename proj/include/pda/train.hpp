#pragma once

// Training strategies behind one plan interface: natural training, Gaussian
// data augmentation, PGD adversarial training and Progressive Data
// Augmentation (progressive per-step perturbation with an epoch schedule).

#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "pda/attacks.hpp"
#include "pda/data.hpp"
#include "pda/nn.hpp"
#include "pda/random.hpp"

namespace pda {

enum class Strategy { natural, gda, pgd_at, pda };

inline Strategy parse_strategy(const std::string& s) {
  if (s == "natural") return Strategy::natural;
  if (s == "gda") return Strategy::gda;
  if (s == "pgd_at") return Strategy::pgd_at;
  if (s == "pda") return Strategy::pda;
  throw std::invalid_argument("unknown strategy '" + s + "'");
}

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::natural: return "natural";
    case Strategy::gda: return "gda";
    case Strategy::pgd_at: return "pgd_at";
    case Strategy::pda: return "pda";
  }
  return "?";
}

/// Pixel-unit parsing shared by configs and the CLI: values >= 1 are in
/// 1/255 steps, smaller values are absolute.
inline double pixel_units(double v) { return v >= 1.0 ? v / 255.0 : v; }

struct TrainPlan {
  Strategy strategy = Strategy::natural;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double learning_rate = 0.05;
  double momentum = 0.0;
  std::uint64_t seed = 0;

  double epsilon = 0.0;  // pda: L2 budget per epoch peak; pgd_at: L-inf budget
  double lambda = 1.0;   // pda decay
  std::size_t k = 3;     // pda progressive steps
  double sigma = 0.0;    // gda
  double alpha = 2.0 / 255.0;  // pgd_at step size
  std::size_t steps = 5;       // pgd_at attack steps

  // API-only knobs (not in plan files).
  std::size_t updates_per_batch = 1;  // natural / gda
  bool clip = true;                   // keep augmented inputs in [0,1]
  bool track_clean = true;            // per-epoch clean loss/accuracy

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("plan: epochs must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("plan: batch must be >= 1");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("plan: lr must be > 0");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("plan: momentum must be in [0,1)");
    if (updates_per_batch < 1) throw std::invalid_argument("plan: updates_per_batch must be >= 1");
    switch (strategy) {
      case Strategy::pda:
        if (k < 1) throw std::invalid_argument("plan: pda k must be >= 1");
        if (!(lambda >= 0.0 && lambda <= 1.0)) throw std::invalid_argument("plan: pda lambda must be in [0,1]");
        if (!(epsilon >= 0.0)) throw std::invalid_argument("plan: eps must be >= 0");
        break;
      case Strategy::gda:
        if (!(sigma >= 0.0)) throw std::invalid_argument("plan: sigma must be >= 0");
        break;
      case Strategy::pgd_at:
        if (!(epsilon >= 0.0) || !(alpha > 0.0) || steps < 1)
          throw std::invalid_argument("plan: pgd_at needs eps >= 0, alpha > 0, steps >= 1");
        break;
      case Strategy::natural:
        break;
    }
  }
};

/// Reads a flat key=value plan; '#' starts a comment, unknown keys fail.
inline TrainPlan parse_plan(std::istream& is) {
  TrainPlan p;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("plan line " + std::to_string(lineno) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq)), val = trim(line.substr(eq + 1));
    try {
      if (key == "strategy") p.strategy = parse_strategy(val);
      else if (key == "epochs") p.epochs = std::stoul(val);
      else if (key == "eps") p.epsilon = pixel_units(std::stod(val));
      else if (key == "lambda") p.lambda = std::stod(val);
      else if (key == "k") p.k = std::stoul(val);
      else if (key == "sigma") p.sigma = std::stod(val);
      else if (key == "alpha") p.alpha = pixel_units(std::stod(val));
      else if (key == "steps") p.steps = std::stoul(val);
      else if (key == "lr") p.learning_rate = std::stod(val);
      else if (key == "momentum") p.momentum = std::stod(val);
      else if (key == "batch") p.batch_size = std::stoul(val);
      else if (key == "seed") p.seed = std::stoull(val);
      else throw std::invalid_argument("plan line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    } catch (const std::logic_error& e) {
      if (std::string(e.what()).starts_with("plan line")) throw;
      throw std::invalid_argument("plan line " + std::to_string(lineno) + ": bad value '" + val + "' for " + key);
    }
  }
  p.validate();
  return p;
}

inline TrainPlan load_plan(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open plan " + path.string());
  return parse_plan(is);
}

/// Display name in the PDA-k-eps / PGD-k-alpha / GDA-sigma convention
/// (eps and alpha in 1/255 units).
inline std::string plan_name(const TrainPlan& p) {
  std::ostringstream os;
  switch (p.strategy) {
    case Strategy::natural: os << "Natural"; break;
    case Strategy::gda: os << "GDA-" << p.sigma; break;
    case Strategy::pgd_at: os << "PGD-" << p.steps << '-' << p.alpha * 255.0; break;
    case Strategy::pda: os << "PDA-" << p.k << '-' << p.epsilon * 255.0; break;
  }
  return os.str();
}

// ---- PDA building blocks ---------------------------------------------------

inline constexpr std::size_t kScheduleSegments = 7;

/// Epoch lengths of the seven schedule segments. The T mod 7 leftover epochs
/// go to the middle segment first, then to mirrored pairs from the inside
/// out, so the per-epoch sequence is a palindrome for every T.
inline std::array<std::size_t, kScheduleSegments> schedule_segments(std::size_t total_epochs) {
  if (total_epochs < 1) throw std::invalid_argument("epsilon_schedule: T must be >= 1");
  std::array<std::size_t, kScheduleSegments> len;
  len.fill(total_epochs / kScheduleSegments);
  std::size_t rest = total_epochs % kScheduleSegments;
  if (rest % 2 == 1) {
    ++len[3];
    --rest;
  }
  for (std::size_t inner = 2; rest > 0; --inner, rest -= 2) {
    ++len[inner];
    ++len[6 - inner];
  }
  return len;
}

/// Peak budget at epoch t: the seven segments carry
/// {0, eps/3, eps/2, eps, eps/2, eps/3, 0}.
inline double epsilon_schedule(std::size_t epoch, std::size_t total_epochs, double epsilon) {
  const auto len = schedule_segments(total_epochs);
  if (epoch >= total_epochs) throw std::out_of_range("epsilon_schedule: epoch index beyond T");
  const std::array<double, kScheduleSegments> value = {0.0,     epsilon / 3.0, epsilon / 2.0, epsilon,
                                                       epsilon / 2.0, epsilon / 3.0, 0.0};
  std::size_t start = 0;
  for (std::size_t s = 0; s < kScheduleSegments; ++s) {
    if (epoch < start + len[s]) return value[s];
    start += len[s];
  }
  return 0.0;
}

/// delta_j = (1 - lambda) * delta_{j-1} + (eps_t / k) * g / |g|_2, with the
/// norm taken per example; examples with |g| < 1e-12 get no new increment.
inline Tensor pda_delta_update(const Tensor& delta_prev, const Tensor& grad, double eps_t, std::size_t k,
                               double lambda) {
  if (delta_prev.shape() != grad.shape()) {
    throw ShapeError("pda_delta_update: delta " + to_string(delta_prev.shape()) + " vs gradient " +
                     to_string(grad.shape()));
  }
  if (k < 1) throw std::invalid_argument("pda_delta_update: k must be >= 1");
  const std::size_t n = grad.rank() == 0 ? 1 : grad.dim(0);
  const std::size_t per = grad.size() / n;
  const double step = eps_t / static_cast<double>(k);
  std::vector<double> out(delta_prev.size());
  for (std::size_t r = 0; r < n; ++r) {
    double sq = 0.0;
    for (std::size_t j = 0; j < per; ++j) sq += grad[r * per + j] * grad[r * per + j];
    const double nrm = std::sqrt(sq);
    const double f = nrm < 1e-12 ? 0.0 : step / nrm;
    for (std::size_t j = 0; j < per; ++j) {
      const std::size_t i = r * per + j;
      out[i] = (1.0 - lambda) * delta_prev[i] + f * grad[i];
    }
  }
  return Tensor(delta_prev.shape(), std::move(out));
}

/// Penalised objective l(theta; x + delta, y) - (lambda/2) |delta|^2, both
/// terms averaged over the batch. Diagnostic only; training never descends it.
inline double surrogate_loss(const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                             const Tensor& delta, double lambda) {
  if (delta.shape() != x.shape()) throw ShapeError("surrogate_loss: delta must match x");
  const double loss = softmax_logloss(model.forward(add(x, delta)), labels).item();
  double sq = 0.0;
  for (double v : delta.data()) sq += v * v;
  return loss - 0.5 * lambda * sq / static_cast<double>(x.dim(0));
}

// ---- training loop ---------------------------------------------------------

struct EpochRecord {
  std::size_t epoch = 0;
  double eps_t = 0.0;
  double clean_loss = 0.0;
  double clean_acc = 0.0;
  double wall_ms = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  void write_csv(std::ostream& os) const {
    os << "epoch,eps_t,clean_loss,clean_acc,wall_ms\n";
    os << std::fixed;
    for (const auto& r : epochs) {
      os << r.epoch << ',' << std::setprecision(6) << r.eps_t << ',' << r.clean_loss << ',' << r.clean_acc << ','
         << std::setprecision(3) << r.wall_ms << '\n';
    }
  }
};

/// Progressive state after step j of one batch.
struct PdaState {
  const Tensor& clean;  // x^0
  const Tensor& delta;  // delta^j
  const Tensor& augmented;  // x^j
  std::size_t step;     // j
  double eps_t;
};

struct TrainHooks {
  std::function<void(const Model&)> on_update;         // after every parameter update
  std::function<void(const PdaState&)> on_pda_step;    // after every progressive step
  std::function<void(const Tensor&)> on_augmented;     // gda/pgd_at batch fed to the update
};

namespace detail {

inline void apply_update(Model& model, Sgd& opt, const Tensor& x, std::span<const std::size_t> y,
                         const TrainHooks& hooks) {
  opt.step(model, loss_and_gradients(model, x, y).param_grads);
  if (hooks.on_update) hooks.on_update(model);
}

inline std::pair<double, double> clean_metrics(const Model& model, const Dataset& data) {
  double loss = 0.0;
  std::size_t correct = 0;
  constexpr std::size_t chunk = 500;
  for (std::size_t b = 0; b < data.size(); b += chunk) {
    const std::size_t e = std::min(data.size(), b + chunk);
    const auto y = std::span<const std::size_t>(data.labels).subspan(b, e - b);
    const Tensor logits = model.forward(data.images.rows(b, e));
    loss += softmax_logloss(logits, y, Reduction::sum).item();
    const auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == y[i];
  }
  const auto n = static_cast<double>(data.size());
  return {loss / n, static_cast<double>(correct) / n};
}

// One PDA batch. The backward pass of each parameter update also yields the
// input gradient at x^j, which seeds delta^{j+1}; only x^0 needs an extra
// input-gradient pass.
inline void pda_batch(Model& model, Sgd& opt, const Tensor& x0, std::span<const std::size_t> y, double eps_t,
                      const TrainPlan& plan, const TrainHooks& hooks) {
  const double n = static_cast<double>(x0.dim(0));
  Tensor grad = input_gradient(model, x0, y);
  Tensor delta(x0.shape());
  Tensor x = x0;
  for (std::size_t j = 1; j <= plan.k; ++j) {
    delta = pda_delta_update(delta, grad, eps_t, plan.k, plan.lambda);
    std::vector<double> next(x.values());
    for (std::size_t i = 0; i < next.size(); ++i) {
      next[i] += delta[i];
      if (plan.clip) next[i] = std::clamp(next[i], 0.0, 1.0);
    }
    x = Tensor(x0.shape(), std::move(next));
    if (hooks.on_pda_step) hooks.on_pda_step(PdaState{x0, delta, x, j, eps_t});
    const bool need_input = j < plan.k;
    LossGrad lg = loss_and_gradients(model, x, y, {.params = true, .input = need_input});
    opt.step(model, lg.param_grads);
    if (hooks.on_update) hooks.on_update(model);
    // mean-reduced gradient rescaled to per-example magnitude
    if (need_input) grad = scale(lg.input_grad, n);
  }
}

}  // namespace detail

/// Trains `model` in place according to `plan`.
inline TrainHistory train(Model& model, const Dataset& data, const TrainPlan& plan, const TrainHooks& hooks = {}) {
  plan.validate();
  data.validate();
  model.check_input(data.images.rows(0, 1));
  Sgd opt(plan.learning_rate, plan.momentum);
  Rng shuffle_rng(derive_seed(plan.seed, "shuffle"));
  Rng gda_rng(derive_seed(plan.seed, "gda"));
  std::uint64_t batch_counter = 0;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainHistory history;
  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    const double eps_t = plan.strategy == Strategy::pda ? epsilon_schedule(epoch, plan.epochs, plan.epsilon) : 0.0;
    const auto start = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order.begin(), order.end());
    for (std::size_t b = 0; b < order.size(); b += plan.batch_size, ++batch_counter) {
      const std::size_t e = std::min(order.size(), b + plan.batch_size);
      const std::span<const std::size_t> idx(order.data() + b, e - b);
      const Tensor x = data.images.gather_rows(idx);
      std::vector<std::size_t> y;
      y.reserve(idx.size());
      for (std::size_t i : idx) y.push_back(data.labels[i]);

      switch (plan.strategy) {
        case Strategy::natural:
          for (std::size_t u = 0; u < plan.updates_per_batch; ++u) detail::apply_update(model, opt, x, y, hooks);
          break;
        case Strategy::gda: {
          std::vector<double> noisy(x.values());
          for (double& v : noisy) {
            v += plan.sigma * gda_rng.normal();
            if (plan.clip) v = std::clamp(v, 0.0, 1.0);
          }
          const Tensor xa(x.shape(), std::move(noisy));
          if (hooks.on_augmented) hooks.on_augmented(xa);
          for (std::size_t u = 0; u < plan.updates_per_batch; ++u) detail::apply_update(model, opt, xa, y, hooks);
          break;
        }
        case Strategy::pgd_at: {
          AttackSpec spec;
          spec.family = AttackFamily::pgd;
          spec.norm = Norm::linf;
          spec.epsilon = plan.epsilon;
          spec.step_size = plan.alpha;
          spec.steps = plan.steps;
          spec.random_init = true;
          spec.seed = derive_seed(derive_seed(plan.seed, "pgd_at"), batch_counter);
          const Tensor xa = pgd_attack(model, x, y, spec);
          if (hooks.on_augmented) hooks.on_augmented(xa);
          detail::apply_update(model, opt, xa, y, hooks);
          break;
        }
        case Strategy::pda:
          detail::pda_batch(model, opt, x, y, eps_t, plan, hooks);
          break;
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.eps_t = eps_t;
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    if (plan.track_clean) std::tie(rec.clean_loss, rec.clean_acc) = detail::clean_metrics(model, data);
    history.epochs.push_back(rec);
  }
  return history;
}

inline TrainHistory pda_train(Model& model, const Dataset& data, const TrainPlan& plan, const TrainHooks& hooks = {}) {
  if (plan.strategy != Strategy::pda) throw std::invalid_argument("pda_train: plan strategy is not pda");
  return train(model, data, plan, hooks);
}

inline TrainHistory gda_train(Model& model, const Dataset& data, const TrainPlan& plan, const TrainHooks& hooks = {}) {
  if (plan.strategy != Strategy::gda) throw std::invalid_argument("gda_train: plan strategy is not gda");
  return train(model, data, plan, hooks);
}

inline TrainHistory pgd_at_train(Model& model, const Dataset& data, const TrainPlan& plan,
                                 const TrainHooks& hooks = {}) {
  if (plan.strategy != Strategy::pgd_at) throw std::invalid_argument("pgd_at_train: plan strategy is not pgd_at");
  return train(model, data, plan, hooks);
}

}  // namespace pda
