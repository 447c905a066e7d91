#pragma once

// Dense 64-bit tensors with an optional reverse-mode gradient tape.
//
// Layout is row-major. Broadcasting follows trailing-dimension alignment:
// shapes are right-aligned, missing leading extents count as 1, and each
// aligned pair of extents must be equal or contain a 1.
//
// A Tape registers itself as the active tape of the calling thread for its
// lifetime. Operations whose inputs live on the active tape record a node;
// everything else is plain value arithmetic.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace pda {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class TapeError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class NumericError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

class Tape;

class Tensor {
 public:
  /// Rank-0 zero.
  Tensor() : data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(numel(shape_), fill) {
    check_extents();
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (data_.size() != numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                       to_string(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> data() const noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  /// Mutable access severs the tape link: the edited value is a new constant.
  std::span<double> mutable_data() noexcept {
    detach_in_place();
    return data_;
  }

  double operator[](std::size_t i) const { return data_[i]; }

  double item() const {
    if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape_));
    return data_[0];
  }

  /// Slice along axis 0: rows [begin, end).
  Tensor rows(std::size_t begin, std::size_t end) const {
    if (shape_.empty() || begin > end || end > shape_[0]) throw ShapeError("row range out of bounds");
    Shape s = shape_;
    s[0] = end - begin;
    const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
    return Tensor(std::move(s), std::vector<double>(data_.begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                                    data_.begin() + static_cast<std::ptrdiff_t>(end * stride)));
  }

  /// Gathers rows along axis 0 in the given order.
  Tensor gather_rows(std::span<const std::size_t> idx) const {
    if (shape_.empty()) throw ShapeError("gather_rows on scalar");
    Shape s = shape_;
    s[0] = idx.size();
    const std::size_t stride = shape_[0] ? data_.size() / shape_[0] : 0;
    std::vector<double> out;
    out.reserve(idx.size() * stride);
    for (std::size_t i : idx) {
      if (i >= shape_[0]) throw ShapeError("gather index out of bounds");
      out.insert(out.end(), data_.begin() + static_cast<std::ptrdiff_t>(i * stride),
                 data_.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
    }
    return Tensor(std::move(s), std::move(out));
  }

  Tensor detach() const {
    Tensor t = *this;
    t.detach_in_place();
    return t;
  }

  bool on_tape() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_extents() const {
    for (std::size_t e : shape_) {
      if (e == 0) throw ShapeError("zero extent in shape " + to_string(shape_));
    }
  }
  void detach_in_place() noexcept {
    tape_id_ = 0;
    node_ = 0;
  }

  Shape shape_;
  std::vector<double> data_;
  std::uint64_t tape_id_ = 0;
  std::size_t node_ = 0;

  friend class Tape;
  friend class Gradients;
};

/// Accumulates the vector-Jacobian product for each input. grad_in[i] is
/// null when input i does not need a gradient.
using Pullback = std::function<void(std::span<const double> grad_out, std::span<std::vector<double>* const> grad_in)>;

class Gradients {
 public:
  /// Gradient of the loss with respect to a tensor recorded on the tape that
  /// produced these gradients.
  Tensor of(const Tensor& t) const;

  std::size_t node_count() const noexcept { return grads_.size(); }
  const Tensor& node(std::size_t i) const { return grads_.at(i); }

 private:
  std::uint64_t tape_id_ = 0;
  std::vector<Tensor> grads_;
  friend class Tape;
};

enum class OpId : std::uint8_t {
  leaf,
  add,
  sub,
  mul,
  scale,
  matmul,
  relu,
  sum,
  reshape,
  conv2d,
  softmax_logloss,
};

class Tape {
 public:
  Tape() : id_(next_id()), previous_(active_slot()) { active_slot() = this; }
  ~Tape() { active_slot() = previous_; }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() noexcept { return active_slot(); }

  /// Records t as a differentiable input.
  Tensor watch(Tensor t) {
    require_recording();
    t.tape_id_ = id_;
    t.node_ = nodes_.size();
    nodes_.push_back(Node{OpId::leaf, {}, t.shape(), nullptr});
    return t;
  }

  bool recording() const noexcept { return !consumed_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  bool holds(const Tensor& t) const noexcept { return t.tape_id_ == id_ && !consumed_; }

  /// Reverse sweep from a scalar loss. The tape is single-use: recording and
  /// further backward calls fail afterwards.
  Gradients backward(const Tensor& loss) {
    if (consumed_) throw TapeError("backward on a consumed tape");
    if (loss.tape_id_ != id_) throw TapeError("backward: loss was not recorded on this tape");
    if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got shape " + to_string(loss.shape()));
    consumed_ = true;

    Gradients g;
    g.tape_id_ = id_;
    std::vector<std::vector<double>> buf(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) buf[i].assign(numel(nodes_[i].shape), 0.0);
    buf[loss.node_][0] = 1.0;

    std::vector<std::vector<double>*> in_ptrs;
    for (std::size_t i = loss.node_ + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.pullback) continue;
      in_ptrs.clear();
      for (std::size_t in : n.inputs) in_ptrs.push_back(in == kConstant ? nullptr : &buf[in]);
      n.pullback(buf[i], in_ptrs);
      n.pullback = nullptr;  // release saved values
    }
    g.grads_.reserve(nodes_.size());
    for (std::size_t i = 0; i < nodes_.size(); ++i) g.grads_.emplace_back(nodes_[i].shape, std::move(buf[i]));
    return g;
  }

  static constexpr std::size_t kConstant = static_cast<std::size_t>(-1);

  /// Node index of t on the active tape, or kConstant.
  static std::size_t node_of(const Tensor& t) noexcept {
    const Tape* tape = active();
    return tape && tape->holds(t) ? t.node_ : kConstant;
  }

  /// Attaches `out` to the active tape when any input is being tracked.
  static Tensor record(Tensor out, OpId op, std::initializer_list<const Tensor*> inputs, Pullback pullback) {
    Tape* tape = active();
    if (!tape || tape->consumed_) return out;
    std::vector<std::size_t> ids;
    bool any = false;
    for (const Tensor* t : inputs) {
      const std::size_t id = node_of(*t);
      any = any || id != kConstant;
      ids.push_back(id);
    }
    if (!any) return out;
    out.tape_id_ = tape->id_;
    out.node_ = tape->nodes_.size();
    tape->nodes_.push_back(Node{op, std::move(ids), out.shape(), std::move(pullback)});
    return out;
  }

  /// True when some input requires a gradient, i.e. recording is worthwhile.
  static bool tracking(std::initializer_list<const Tensor*> inputs) noexcept {
    for (const Tensor* t : inputs)
      if (node_of(*t) != kConstant) return true;
    return false;
  }

 private:
  struct Node {
    OpId op;
    std::vector<std::size_t> inputs;
    Shape shape;
    Pullback pullback;
  };

  void require_recording() const {
    if (consumed_) throw TapeError("tape already consumed by backward");
  }

  static Tape*& active_slot() noexcept {
    thread_local Tape* slot = nullptr;
    return slot;
  }
  static std::uint64_t next_id() noexcept {
    thread_local std::uint64_t counter = 0;
    // Mix in the slot address so ids from different threads never collide.
    return (++counter << 16) ^ (reinterpret_cast<std::uintptr_t>(&counter) >> 4);
  }

  std::uint64_t id_;
  Tape* previous_;
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

inline bool Tensor::on_tape() const noexcept { return Tape::node_of(*this) != Tape::kConstant; }

inline Tensor Gradients::of(const Tensor& t) const {
  if (t.tape_id_ != tape_id_ || t.tape_id_ == 0) throw TapeError("gradient requested for a tensor not on this tape");
  return grads_.at(t.node_);
}

}  // namespace pda
