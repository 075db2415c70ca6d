#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "dcmrl/tensor.hpp"

namespace dcmrl {

class Tape;

// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

// Reverse-mode gradient tape. Nodes are appended in evaluation order, so the
// recording order is already topological; backward walks it in reverse.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // A leaf whose gradient is accumulated into p.value.grad by backward().
  Var leaf(Parameter& p);
  // A leaf that collects gradients on the tape only (for inputs under test).
  Var input(Tensor value);

  // Records a node. `inputs` decide whether the node needs a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Gradient buffer of a node after backward(); empty if none flowed there.
  const std::vector<double>& grad(Var v) const { return nodes_[v.id].grad; }
  std::vector<double>& grad_buffer(std::size_t id);
  const Tensor& value_at(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad_at(std::size_t id) const { return nodes_[id].requires_grad; }

  // Seeds d(loss)/d(loss) = 1 and propagates. Gradients on every node are
  // recomputed from scratch, so repeated calls produce identical node grads;
  // parameter grads accumulate.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

// ---- primitives ------------------------------------------------------------
// Elementwise binary ops accept identical shapes or a 1x1 operand on either
// side. Shape mismatches throw Error(invalid_argument) naming both shapes.

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double k);
Var add_scalar(Var a, double k);
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var relu(Var a);
Var softplus(Var a);
Var square(Var a);
Var sqrt(Var a);
Var clamp(Var a, double lo, double hi);
Var minimum(Var a, Var b);
Var sum(Var a);   // -> 1x1
Var mean(Var a);  // -> 1x1
Var sum_cols(Var a);  // [r,c] -> [r,1]

// [r,c] + [1,c] row broadcast (bias add).
Var add_row(Var a, Var row);
Var concat_cols(std::initializer_list<Var> parts);
Var slice_cols(Var a, std::size_t begin, std::size_t end);
// Mean of each consecutive group of `group` rows: [g*n, c] -> [n, c].
Var pool_rows(Var a, std::size_t group);
// Each row repeated `times` times consecutively: [n, c] -> [n*times, c].
Var repeat_rows(Var a, std::size_t times);
// Rows of `table` selected by index (scatter-add backward).
Var gather_rows(Var table, std::span<const std::size_t> index);
// Row-wise cosine similarity [r,c],[r,c] -> [r,1]. Rows whose norm product is
// zero produce 0 and pass no gradient.
Var cosine_rows(Var a, Var b);

// sg[x]: identity forward, zero gradient backward.
Var stop_gradient(Var a);
// Forward value `forward`, backward routes the incoming gradient to `through`
// unchanged (straight-through estimator).
Var straight_through(Tensor forward, Var through);

// Finite-difference support. While a DetachReplay is alive, the first forward
// pass records every detached value (sg inputs and straight-through offsets);
// after rewind() later passes reuse them in the same order, so perturbed
// forward values follow the function the tape actually differentiates.
class DetachReplay {
 public:
  DetachReplay();
  ~DetachReplay();
  DetachReplay(const DetachReplay&) = delete;
  DetachReplay& operator=(const DetachReplay&) = delete;

  // Switches to replay and restarts from the first recorded value.
  void rewind();
  std::size_t recorded() const { return values_.size(); }

  // Used by stop_gradient and straight_through.
  static DetachReplay* active();
  Tensor detach(const Tensor& value);

 private:
  DetachReplay* previous_;
  std::vector<Tensor> values_;
  std::size_t cursor_ = 0;
  bool replaying_ = false;
};

// Operator sugar.
inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double k, Var a) { return scale(a, k); }
inline Var operator*(Var a, double k) { return scale(a, k); }

}  // namespace dcmrl
