#pragma once

// Desk-scale classifiers (MLP, small CNN, linear) and the SGD optimizer.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "pda/ops.hpp"
#include "pda/random.hpp"
#include "pda/tensor.hpp"
#include "pda/tensor_io.hpp"

namespace pda {

enum class LayerKind { dense, conv, relu, flatten };

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t units = 0;  // dense outputs / conv filters
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;

  static LayerSpec dense(std::size_t units) { return {LayerKind::dense, units, 0, 1, 0}; }
  static LayerSpec conv(std::size_t filters, std::size_t kernel, std::size_t stride, std::size_t padding) {
    return {LayerKind::conv, filters, kernel, stride, padding};
  }
  static LayerSpec relu() { return {LayerKind::relu, 0, 0, 1, 0}; }
  static LayerSpec flatten() { return {LayerKind::flatten, 0, 0, 1, 0}; }
};

/// Named parameter set; keys sort in layer order.
using ParamMap = std::map<std::string, Tensor>;

class Model {
 public:
  Model(std::string arch, Shape input_shape, std::size_t num_classes, std::vector<LayerSpec> layers)
      : arch_(std::move(arch)), input_shape_(std::move(input_shape)), num_classes_(num_classes), layers_(std::move(layers)) {
    if (num_classes_ < 2) throw std::invalid_argument("model needs at least 2 classes");
    if (input_shape_.empty()) throw ShapeError("model input shape must be non-empty");
    Shape s = input_shape_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const LayerSpec& l = layers_[i];
      switch (l.kind) {
        case LayerKind::dense:
          if (s.size() != 1) throw ShapeError("dense layer " + std::to_string(i) + " needs flat input, got " + to_string(s));
          params_.emplace(param_name(i, "weight"), Tensor(Shape{s[0], l.units}));
          params_.emplace(param_name(i, "bias"), Tensor(Shape{l.units}));
          s = {l.units};
          break;
        case LayerKind::conv: {
          if (s.size() != 3) throw ShapeError("conv layer " + std::to_string(i) + " needs [C,H,W] input, got " + to_string(s));
          if (l.stride < 1 || l.kernel > s[1] + 2 * l.padding || l.kernel > s[2] + 2 * l.padding)
            throw std::invalid_argument("conv layer " + std::to_string(i) + ": invalid kernel/stride/padding");
          params_.emplace(param_name(i, "weight"), Tensor(Shape{l.units, s[0], l.kernel, l.kernel}));
          params_.emplace(param_name(i, "bias"), Tensor(Shape{l.units, 1, 1}));
          s = {l.units, (s[1] + 2 * l.padding - l.kernel) / l.stride + 1, (s[2] + 2 * l.padding - l.kernel) / l.stride + 1};
          break;
        }
        case LayerKind::flatten:
          s = {numel(s)};
          break;
        case LayerKind::relu:
          break;
      }
    }
    if (s != Shape{num_classes_}) {
      throw ShapeError("layer stack ends in " + to_string(s) + ", expected [" + std::to_string(num_classes_) + "]");
    }
  }

  /// Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); zero biases.
  void initialize(std::uint64_t seed, bool zero = false) {
    seed_ = seed;
    Rng rng(derive_seed(seed, "init"));
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const LayerSpec& l = layers_[i];
      if (l.kind != LayerKind::dense && l.kind != LayerKind::conv) continue;
      Tensor& w = params_.at(param_name(i, "weight"));
      Tensor& b = params_.at(param_name(i, "bias"));
      double fan_in, fan_out;
      if (l.kind == LayerKind::dense) {
        fan_in = static_cast<double>(w.dim(0));
        fan_out = static_cast<double>(w.dim(1));
      } else {
        const double area = static_cast<double>(l.kernel * l.kernel);
        fan_in = static_cast<double>(w.dim(1)) * area;
        fan_out = static_cast<double>(w.dim(0)) * area;
      }
      const double a = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : w.mutable_data()) v = zero ? 0.0 : rng.uniform(-a, a);
      for (double& v : b.mutable_data()) v = 0.0;
    }
  }

  Tensor forward(const Tensor& x) const { return forward(x, params_); }

  /// Logits [N, m]. `params` may hold tape-watched copies of the parameters.
  Tensor forward(const Tensor& x, const ParamMap& params) const {
    check_input(x);
    Tensor h = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      const LayerSpec& l = layers_[i];
      switch (l.kind) {
        case LayerKind::dense:
          h = add(matmul(h, params.at(param_name(i, "weight"))), params.at(param_name(i, "bias")));
          break;
        case LayerKind::conv:
          h = add(conv2d(h, params.at(param_name(i, "weight")), l.stride, l.padding), params.at(param_name(i, "bias")));
          break;
        case LayerKind::relu:
          h = relu(h);
          break;
        case LayerKind::flatten:
          h = flatten(h);
          break;
      }
    }
    return h;
  }

  void check_input(const Tensor& x) const {
    bool ok = x.rank() == input_shape_.size() + 1;
    for (std::size_t i = 0; ok && i < input_shape_.size(); ++i) ok = x.dim(i + 1) == input_shape_[i];
    if (!ok) throw ShapeError("model expects [N]" + to_string(input_shape_) + " input, got " + to_string(x.shape()));
  }

  const std::string& arch() const noexcept { return arch_; }
  const Shape& input_shape() const noexcept { return input_shape_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  const std::vector<LayerSpec>& layers() const noexcept { return layers_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const ParamMap& params() const noexcept { return params_; }
  ParamMap& params() noexcept { return params_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

  static std::string param_name(std::size_t layer, std::string_view what) {
    std::string idx = std::to_string(layer);
    if (idx.size() < 2) idx.insert(0, 2 - idx.size(), '0');
    return "l" + idx + "." + std::string(what);
  }

 private:
  std::string arch_;
  Shape input_shape_;
  std::size_t num_classes_;
  std::vector<LayerSpec> layers_;
  ParamMap params_;
  std::uint64_t seed_ = 0;
};

/// Architectures: "mlp" (two hidden dense layers of width 64), "cnn_small"
/// (conv 8 -> conv 16, both 3x3 with stride 2, then a 32-unit dense head) and
/// "linear".
inline Model build_model(std::string_view arch, const Shape& input_shape, std::size_t num_classes, std::uint64_t seed,
                         bool zero_init = false) {
  if (num_classes < 2) throw std::invalid_argument("build_model: need at least 2 classes");
  std::vector<LayerSpec> layers;
  if (arch == "mlp") {
    if (input_shape.size() > 1) layers.push_back(LayerSpec::flatten());
    layers.insert(layers.end(), {LayerSpec::dense(64), LayerSpec::relu(), LayerSpec::dense(64), LayerSpec::relu(),
                                 LayerSpec::dense(num_classes)});
  } else if (arch == "cnn_small") {
    if (input_shape.size() != 3) throw ShapeError("cnn_small needs [C,H,W] input, got " + to_string(input_shape));
    layers = {LayerSpec::conv(8, 3, 2, 1), LayerSpec::relu(),     LayerSpec::conv(16, 3, 2, 1),
              LayerSpec::relu(),          LayerSpec::flatten(),  LayerSpec::dense(32),
              LayerSpec::relu(),          LayerSpec::dense(num_classes)};
  } else if (arch == "linear") {
    if (input_shape.size() > 1) layers.push_back(LayerSpec::flatten());
    layers.push_back(LayerSpec::dense(num_classes));
  } else {
    throw std::invalid_argument("unknown architecture '" + std::string(arch) + "'");
  }
  Model model(std::string(arch), input_shape, num_classes, std::move(layers));
  model.initialize(seed, zero_init);
  return model;
}

struct GradRequest {
  bool params = true;
  bool input = false;
  Reduction reduction = Reduction::mean;
};

struct LossGrad {
  double loss = 0.0;
  Tensor logits;
  Tensor input_grad;
  ParamMap param_grads;
};

/// One forward/backward pass of the log-loss, returning the requested
/// gradients. Everything else in the library funnels through here.
inline LossGrad loss_and_gradients(const Model& model, const Tensor& x, std::span<const std::size_t> labels,
                                   GradRequest request = {}) {
  Tape tape;
  Tensor xin = request.input ? tape.watch(x) : x;
  ParamMap watched;
  if (request.params) {
    for (const auto& [name, t] : model.params()) watched.emplace(name, tape.watch(t));
  }
  LossGrad out;
  out.logits = model.forward(xin, request.params ? watched : model.params());
  Tensor loss = softmax_logloss(out.logits, labels, request.reduction);
  out.loss = loss.item();
  if (!request.params && !request.input) return out;
  Gradients g = tape.backward(loss);
  if (request.input) out.input_grad = g.of(xin);
  if (request.params)
    for (const auto& [name, t] : watched) out.param_grads.emplace(name, g.of(t));
  out.logits = out.logits.detach();
  return out;
}

/// Argmax predictions, evaluated in chunks of `batch` rows.
inline std::vector<std::size_t> predict(const Model& model, const Tensor& x, std::size_t batch = 256) {
  std::vector<std::size_t> out;
  out.reserve(x.dim(0));
  for (std::size_t b = 0; b < x.dim(0); b += batch) {
    const auto p = argmax_rows(model.forward(x.rows(b, std::min(x.dim(0), b + batch))));
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

/// SGD with optional heavy-ball momentum: v <- mu*v + g; theta <- theta - lr*v.
class Sgd {
 public:
  explicit Sgd(double learning_rate, double momentum = 0.0) : learning_rate_(learning_rate), momentum_(momentum) {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw std::invalid_argument("momentum must be in [0,1)");
  }

  void step(Model& model, const ParamMap& grads) {
    for (const auto& [name, _] : model.params()) {
      if (!grads.contains(name)) throw std::invalid_argument("sgd_step: missing gradient for '" + name + "'");
    }
    for (auto& [name, theta] : model.params()) {
      const Tensor& g = grads.at(name);
      if (g.shape() != theta.shape()) {
        throw ShapeError("sgd_step: gradient " + to_string(g.shape()) + " for '" + name + "' of shape " +
                         to_string(theta.shape()));
      }
      auto th = theta.mutable_data();
      if (momentum_ == 0.0) {
        for (std::size_t i = 0; i < th.size(); ++i) th[i] -= learning_rate_ * g[i];
        continue;
      }
      auto [it, inserted] = velocity_.try_emplace(name, Tensor(theta.shape()));
      auto v = it->second.mutable_data();
      for (std::size_t i = 0; i < th.size(); ++i) {
        v[i] = momentum_ * v[i] + g[i];
        th[i] -= learning_rate_ * v[i];
      }
    }
  }

  double learning_rate() const noexcept { return learning_rate_; }
  double momentum() const noexcept { return momentum_; }
  const ParamMap& velocity() const noexcept { return velocity_; }

 private:
  double learning_rate_;
  double momentum_;
  ParamMap velocity_;
};

inline void sgd_step(Sgd& opt, Model& model, const ParamMap& grads) { opt.step(model, grads); }

// Checkpoints: a directory with manifest.txt plus one tensor file per parameter.

inline void save_checkpoint(const Model& model, const std::filesystem::path& dir, std::size_t epoch) {
  std::filesystem::create_directories(dir);
  std::ofstream mf(dir / "manifest.txt");
  if (!mf) throw std::runtime_error("cannot write checkpoint manifest in " + dir.string());
  mf << "arch=" << model.arch() << '\n';
  mf << "input_shape=";
  for (std::size_t i = 0; i < model.input_shape().size(); ++i) mf << (i ? "," : "") << model.input_shape()[i];
  mf << "\nnum_classes=" << model.num_classes() << '\n';
  mf << "seed=" << model.seed() << '\n';
  mf << "epoch=" << epoch << '\n';
  for (const auto& [name, t] : model.params()) {
    mf << "param=" << name << ' ';
    for (std::size_t i = 0; i < t.rank(); ++i) mf << (i ? "," : "") << t.dim(i);
    mf << '\n';
    save_tensor(dir / (name + ".pdat"), t);
  }
}

struct Checkpoint {
  Model model;
  std::size_t epoch = 0;
};

inline Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.txt");
  if (!mf) throw std::runtime_error("no checkpoint manifest in " + dir.string());
  std::string arch;
  Shape input_shape;
  std::size_t classes = 0, epoch = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> names;
  std::string line;
  auto parse_shape = [](const std::string& s) {
    Shape out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoul(tok));
    return out;
  };
  while (std::getline(mf, line)) {
    const auto eq = line.find('=');
    if (line.empty() || eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "arch") arch = val;
    else if (key == "input_shape") input_shape = parse_shape(val);
    else if (key == "num_classes") classes = std::stoul(val);
    else if (key == "seed") seed = std::stoull(val);
    else if (key == "epoch") epoch = std::stoul(val);
    else if (key == "param") names.push_back(val.substr(0, val.find(' ')));
  }
  Model model = build_model(arch, input_shape, classes, seed);
  for (const auto& name : names) {
    auto it = model.params().find(name);
    if (it == model.params().end()) throw FormatError("checkpoint parameter '" + name + "' unknown to arch " + arch);
    Tensor t = load_tensor(dir / (name + ".pdat"));
    if (t.shape() != it->second.shape()) throw FormatError("checkpoint parameter '" + name + "' has wrong shape");
    it->second = std::move(t);
  }
  if (names.size() != model.params().size()) throw FormatError("checkpoint is missing parameters");
  return {std::move(model), epoch};
}

}  // namespace pda
