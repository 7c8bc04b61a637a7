#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "latte/tensor.hpp"

namespace latte {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
// is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t id() const { return id_; }
  Tape& tape() const { return *tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Gradient buffers returned by Tape::backward. Lookup of a node that did not
// participate in the loss yields zeros of the node's shape.
class Gradients {
 public:
  Tensor wrt(Var v) const;

 private:
  friend class Tape;
  const Tape* tape_ = nullptr;
  std::vector<Tensor> grads_;
  std::vector<bool> present_;
};

// Records operations in creation order, which is a topological order of the
// computation graph. Single-threaded by contract.
class Tape {
 public:
  // Receives the gradient flowing into the node's output. Implementations
  // add their parent contributions through Tape::accumulate.
  using BackwardFn = std::function<void(Tape&, const Tensor& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value, bool trainable = true);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records a node computed outside the built-in op set. `backward` is only
  // kept when at least one parent requires a gradient.
  Var record(Tensor value, std::span<const Var> parents, BackwardFn backward,
             std::string_view name);

  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  std::size_t size() const { return nodes_.size(); }

  // Adds `g` into the gradient buffer of `target` during backward.
  void accumulate(Var target, const Tensor& g);
  // Mutable gradient buffer for in-place accumulation; nullptr when the node
  // does not require a gradient.
  Tensor* grad_buffer(Var target);

  Gradients backward(Var loss);

 private:
  struct Node {
    Tensor value;
    BackwardFn backward;
    bool requires_grad = false;
    std::string name;
  };

  // A deque keeps references returned by value() valid while nodes are added.
  std::deque<Node> nodes_;
  std::vector<Tensor>* active_grads_ = nullptr;
  std::vector<bool>* active_present_ = nullptr;
};

// ---- op set ---------------------------------------------------------------
// Binary elementwise ops broadcast the lower-rank operand when its shape is a
// suffix of the other operand's shape (this includes scalars).
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var add_scalar(Var a, double c);

// a: [..., k], b: [k, n] -> [..., n]
Var matmul(Var a, Var b);
// x: [N, H, W, Cin], kernel: [k, k, Cin, Cout] with k odd; stride 1, zero
// padding (k - 1) / 2, output [N, H, W, Cout].
Var conv2d_same(Var x, Var kernel);

Var sigmoid(Var x);
Var tanh(Var x);
Var exp(Var x);
Var log(Var x);
Var sqrt(Var x);
Var abs(Var x);
Var square(Var x);

Var sum(Var x);
Var mean(Var x);

Var reshape(Var x, Shape shape);
Var concat(std::span<const Var> xs, std::size_t axis);
Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end);
Var stack(std::span<const Var> xs, std::size_t axis = 0);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

// ---- gradient checking ----------------------------------------------------
using TensorFunction = std::function<Var(Tape&, std::span<const Var>)>;

struct GradCheckOptions {
  double epsilon = 1e-6;
  // When nonzero, only this many seeded-random coordinates per input are
  // checked.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
};

// Max over checked coordinates of |analytic - central difference| /
// max(1, |analytic|). `f` must return a scalar.
double grad_check(const TensorFunction& f, std::span<const Tensor> inputs,
                  const GradCheckOptions& options = {});
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                  double epsilon = 1e-6);

}  // namespace latte
