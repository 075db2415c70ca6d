#include "dcmrl/tape.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "dcmrl/error.hpp"

namespace dcmrl {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC view(const Tensor& t) { return MapC(t.data.data(), Eigen::Index(t.rows()), Eigen::Index(t.cols())); }
MapC view(const std::vector<double>& d, std::size_t r, std::size_t c) {
  return MapC(d.data(), Eigen::Index(r), Eigen::Index(c));
}
Map view(std::vector<double>& d, std::size_t r, std::size_t c) {
  return Map(d.data(), Eigen::Index(r), Eigen::Index(c));
}

Tape& same_tape(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) fail(ErrorKind::invalid_argument, "operands recorded on different tapes");
  return *a.tape;
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  fail(ErrorKind::invalid_argument,
       std::string(op) + ": shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

// Shape of an elementwise result with scalar broadcast.
void broadcast_shape(const char* op, const Tensor& a, const Tensor& b, std::size_t& r, std::size_t& c) {
  if (a.shape == b.shape) {
    r = a.rows();
    c = a.cols();
  } else if (b.is_scalar()) {
    r = a.rows();
    c = a.cols();
  } else if (a.is_scalar()) {
    r = b.rows();
    c = b.cols();
  } else {
    shape_error(op, a, b);
  }
}

// Generic elementwise binary op. `f` computes the value, `da`/`db` the local
// partials given (x, y, out).
template <class F, class DA, class DB>
Var binary(const char* op, Var a, Var b, F f, DA da, DB db) {
  Tape& t = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  std::size_t r = 0, c = 0;
  broadcast_shape(op, x, y, r, c);
  const bool xs = x.size() == 1 && r * c != 1;
  const bool ys = y.size() == 1 && r * c != 1;
  Tensor out(r, c);
  for (std::size_t i = 0; i < r * c; ++i) {
    out.data[i] = f(x.data[xs ? 0 : i], y.data[ys ? 0 : i]);
  }
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {a, b}, [ia, ib, xs, ys, da, db](Tape& tp, std::size_t self) {
    const std::vector<double>& g = tp.grad_buffer(self);
    const Tensor& o = tp.value_at(self);
    const Tensor& xv = tp.value_at(ia);
    const Tensor& yv = tp.value_at(ib);
    const std::size_t n = o.size();
    if (tp.requires_grad_at(ia)) {
      std::vector<double>& ga = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < n; ++i) {
        ga[xs ? 0 : i] += g[i] * da(xv.data[xs ? 0 : i], yv.data[ys ? 0 : i], o.data[i]);
      }
    }
    if (tp.requires_grad_at(ib)) {
      std::vector<double>& gb = tp.grad_buffer(ib);
      for (std::size_t i = 0; i < n; ++i) {
        gb[ys ? 0 : i] += g[i] * db(xv.data[xs ? 0 : i], yv.data[ys ? 0 : i], o.data[i]);
      }
    }
  });
}

// Elementwise unary op with local derivative d(x, out).
template <class F, class D>
Var unary(Var a, F f, D d) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) out.data[i] = f(x.data[i]);
  const std::size_t ia = a.id;
  return t.record(std::move(out), {a}, [ia, d](Tape& tp, std::size_t self) {
    const std::vector<double>& g = tp.grad_buffer(self);
    const Tensor& o = tp.value_at(self);
    const Tensor& xv = tp.value_at(ia);
    std::vector<double>& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < o.size(); ++i) ga[i] += g[i] * d(xv.data[i], o.data[i]);
  });
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }

// ---- Tape ------------------------------------------------------------------

Var Tape::constant(Tensor value) {
  value.grad.clear();
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, false});
  return Var{this, nodes_.size() - 1};
}

Var Tape::leaf(Parameter& p) {
  Tensor v;
  v.shape = p.value.shape;
  v.data = p.value.data;
  nodes_.push_back(Node{std::move(v), {}, {}, &p, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::input(Tensor value) {
  value.grad.clear();
  nodes_.push_back(Node{std::move(value), {}, {}, nullptr, true});
  return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (Var v : inputs) {
    if (v.tape != this) fail(ErrorKind::invalid_argument, "input recorded on a different tape");
    needs = needs || nodes_[v.id].requires_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(fn) : BackwardFn{}, nullptr, needs});
  return Var{this, nodes_.size() - 1};
}

std::vector<double>& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (nodes_.empty()) return;
  if (loss.tape != this) fail(ErrorKind::invalid_argument, "backward: loss recorded on a different tape");
  if (!nodes_[loss.id].value.is_scalar()) {
    fail(ErrorKind::invalid_argument, "backward: loss must be scalar, got " + nodes_[loss.id].value.shape_str());
  }
  for (Node& n : nodes_) n.grad.clear();
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, i);
    if (n.param != nullptr) {
      std::vector<double>& pg = n.param->value.grad;
      if (pg.size() != n.grad.size()) pg.assign(n.grad.size(), 0.0);
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
    }
  }
}

// ---- primitives ------------------------------------------------------------

Var matmul(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) shape_error("matmul", x, y);
  Tensor out(x.rows(), y.cols());
  view(out.data, out.rows(), out.cols()).noalias() = view(x) * view(y);
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {a, b}, [ia, ib](Tape& tp, std::size_t self) {
    const Tensor& xv = tp.value_at(ia);
    const Tensor& yv = tp.value_at(ib);
    const std::vector<double>& g = tp.grad_buffer(self);
    auto gm = view(g, xv.rows(), yv.cols());
    if (tp.requires_grad_at(ia)) {
      view(tp.grad_buffer(ia), xv.rows(), xv.cols()).noalias() += gm * view(yv).transpose();
    }
    if (tp.requires_grad_at(ib)) {
      view(tp.grad_buffer(ib), yv.rows(), yv.cols()).noalias() += view(xv).transpose() * gm;
    }
  });
}

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}

Var minimum(Var a, Var b) {
  // Ties send the gradient to the first operand.
  return binary(
      "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

Var neg(Var a) {
  return unary(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Var scale(Var a, double k) {
  return unary(a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Var add_scalar(Var a, double k) {
  return unary(a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double o) { return o; });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double o) { return 1.0 - o * o; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double o) { return 0.5 / o; });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.data) s += v;
  const std::size_t ia = a.id;
  return t.record(Tensor::scalar(s), {a}, [ia](Tape& tp, std::size_t self) {
    const double g = tp.grad_buffer(self)[0];
    for (double& v : tp.grad_buffer(ia)) v += g;
  });
}

Var mean(Var a) {
  const double n = double(a.value().size());
  if (n == 0) fail(ErrorKind::invalid_argument, "mean of empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var sum_cols(Var a) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  Tensor out(x.rows(), 1);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double s = 0.0;
    const double* p = x.row_ptr(r);
    for (std::size_t c = 0; c < x.cols(); ++c) s += p[c];
    out.data[r] = s;
  }
  const std::size_t ia = a.id;
  return t.record(std::move(out), {a}, [ia](Tape& tp, std::size_t self) {
    const std::vector<double>& g = tp.grad_buffer(self);
    const Tensor& xv = tp.value_at(ia);
    std::vector<double>& ga = tp.grad_buffer(ia);
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      for (std::size_t c = 0; c < xv.cols(); ++c) ga[r * xv.cols() + c] += g[r];
    }
  });
}

Var add_row(Var a, Var row) {
  Tape& t = same_tape(a, row);
  const Tensor& x = a.value();
  const Tensor& b = row.value();
  if (b.rows() != 1 || b.cols() != x.cols()) shape_error("add_row", x, b);
  Tensor out = x;
  out.grad.clear();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double* p = out.row_ptr(r);
    for (std::size_t c = 0; c < x.cols(); ++c) p[c] += b.data[c];
  }
  const std::size_t ia = a.id, ib = row.id;
  return t.record(std::move(out), {a, row}, [ia, ib](Tape& tp, std::size_t self) {
    const std::vector<double>& g = tp.grad_buffer(self);
    const Tensor& xv = tp.value_at(ia);
    if (tp.requires_grad_at(ia)) {
      std::vector<double>& ga = tp.grad_buffer(ia);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.requires_grad_at(ib)) {
      std::vector<double>& gb = tp.grad_buffer(ib);
      for (std::size_t r = 0; r < xv.rows(); ++r) {
        for (std::size_t c = 0; c < xv.cols(); ++c) gb[c] += g[r * xv.cols() + c];
      }
    }
  });
}

Var concat_cols(std::initializer_list<Var> parts) {
  if (parts.size() == 0) fail(ErrorKind::invalid_argument, "concat_cols of nothing");
  Tape& t = *parts.begin()->tape;
  const std::size_t rows = parts.begin()->rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids, widths;
  for (Var v : parts) {
    if (v.tape != &t) fail(ErrorKind::invalid_argument, "concat_cols: operands on different tapes");
    if (v.rows() != rows) shape_error("concat_cols", parts.begin()->value(), v.value());
    ids.push_back(v.id);
    widths.push_back(v.cols());
    cols += v.cols();
  }
  Tensor out(rows, cols);
  std::size_t off = 0;
  for (Var v : parts) {
    const Tensor& x = v.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(x.row_ptr(r), x.row_ptr(r) + x.cols(), out.row_ptr(r) + off);
    }
    off += x.cols();
  }
  Var res = t.record(std::move(out), parts, [ids, widths, rows, cols](Tape& tp, std::size_t self) {
    const std::vector<double>& g = tp.grad_buffer(self);
    std::size_t o = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (tp.requires_grad_at(ids[k])) {
        std::vector<double>& gk = tp.grad_buffer(ids[k]);
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < widths[k]; ++c) gk[r * widths[k] + c] += g[r * cols + o + c];
        }
      }
      o += widths[k];
    }
  });
  return res;
}

Var slice_cols(Var a, std::size_t begin, std::size_t end) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  if (begin > end || end > x.cols()) {
    fail(ErrorKind::invalid_argument, "slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                                          ") outside " + x.shape_str());
  }
  const std::size_t w = end - begin;
  Tensor out(x.rows(), w);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::copy(x.row_ptr(r) + begin, x.row_ptr(r) + end, out.row_ptr(r));
  }
  const std::size_t ia = a.id, cols = x.cols();
  return t.record(std::move(out), {a}, [ia, begin, w, cols](Tape& tp, std::size_t self) {
    const std::vector<double>& g = tp.grad_buffer(self);
    std::vector<double>& ga = tp.grad_buffer(ia);
    const std::size_t rows = g.size() / (w == 0 ? 1 : w);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < w; ++c) ga[r * cols + begin + c] += g[r * w + c];
    }
  });
}

Var pool_rows(Var a, std::size_t group) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  if (group == 0 || x.rows() % group != 0) {
    fail(ErrorKind::invalid_argument, "pool_rows: " + std::to_string(x.rows()) + " rows not divisible by group " +
                                          std::to_string(group));
  }
  const std::size_t n = x.rows() / group, c = x.cols();
  Tensor out(n, c);
  const double inv = 1.0 / double(group);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double* p = x.row_ptr(r);
    double* o = out.row_ptr(r / group);
    for (std::size_t k = 0; k < c; ++k) o[k] += p[k] * inv;
  }
  const std::size_t ia = a.id;
  return t.record(std::move(out), {a}, [ia, group, c, inv](Tape& tp, std::size_t self) {
    const std::vector<double>& g = tp.grad_buffer(self);
    std::vector<double>& ga = tp.grad_buffer(ia);
    const std::size_t rows = ga.size() / c;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < c; ++k) ga[r * c + k] += g[(r / group) * c + k] * inv;
    }
  });
}

Var repeat_rows(Var a, std::size_t times) {
  Tape& t = *a.tape;
  const Tensor& x = a.value();
  const std::size_t c = x.cols();
  Tensor out(x.rows() * times, c);
  for (std::size_t r = 0; r < out.rows(); ++r) std::copy(x.row_ptr(r / times), x.row_ptr(r / times) + c, out.row_ptr(r));
  const std::size_t ia = a.id;
  return t.record(std::move(out), {a}, [ia, times, c](Tape& tp, std::size_t self) {
    const std::vector<double>& g = tp.grad_buffer(self);
    std::vector<double>& ga = tp.grad_buffer(ia);
    const std::size_t rows = g.size() / c;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t k = 0; k < c; ++k) ga[(r / times) * c + k] += g[r * c + k];
    }
  });
}

Var gather_rows(Var table, std::span<const std::size_t> index) {
  Tape& t = *table.tape;
  const Tensor& x = table.value();
  const std::size_t c = x.cols();
  Tensor out(index.size(), c);
  for (std::size_t r = 0; r < index.size(); ++r) {
    if (index[r] >= x.rows()) {
      fail(ErrorKind::invalid_argument, "gather_rows: index " + std::to_string(index[r]) + " outside " + x.shape_str());
    }
    std::copy(x.row_ptr(index[r]), x.row_ptr(index[r]) + c, out.row_ptr(r));
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  const std::size_t ia = table.id;
  return t.record(std::move(out), {table}, [ia, idx = std::move(idx), c](Tape& tp, std::size_t self) {
    const std::vector<double>& g = tp.grad_buffer(self);
    std::vector<double>& ga = tp.grad_buffer(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t k = 0; k < c; ++k) ga[idx[r] * c + k] += g[r * c + k];
    }
  });
}

Var cosine_rows(Var a, Var b) {
  Tape& t = same_tape(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.shape != y.shape) shape_error("cosine_rows", x, y);
  const std::size_t rows = x.rows(), c = x.cols();
  Tensor out(rows, 1);
  // Per row: dot, |x|, |y|.
  std::vector<double> stats(rows * 3, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double d = 0, nx = 0, ny = 0;
    for (std::size_t k = 0; k < c; ++k) {
      d += x(r, k) * y(r, k);
      nx += x(r, k) * x(r, k);
      ny += y(r, k) * y(r, k);
    }
    nx = std::sqrt(nx);
    ny = std::sqrt(ny);
    stats[3 * r] = d;
    stats[3 * r + 1] = nx;
    stats[3 * r + 2] = ny;
    out.data[r] = (nx * ny > 0.0) ? d / (nx * ny) : 0.0;
  }
  const std::size_t ia = a.id, ib = b.id;
  return t.record(std::move(out), {a, b}, [ia, ib, stats = std::move(stats), c](Tape& tp, std::size_t self) {
    const std::vector<double>& g = tp.grad_buffer(self);
    const Tensor& xv = tp.value_at(ia);
    const Tensor& yv = tp.value_at(ib);
    const Tensor& o = tp.value_at(self);
    const bool need_a = tp.requires_grad_at(ia), need_b = tp.requires_grad_at(ib);
    std::vector<double>* ga = need_a ? &tp.grad_buffer(ia) : nullptr;
    std::vector<double>* gb = need_b ? &tp.grad_buffer(ib) : nullptr;
    for (std::size_t r = 0; r < xv.rows(); ++r) {
      const double nx = stats[3 * r + 1], ny = stats[3 * r + 2];
      if (nx * ny <= 0.0) continue;
      const double cs = o.data[r];
      for (std::size_t k = 0; k < c; ++k) {
        // d cos / dx = y/(|x||y|) - cos * x/|x|^2
        if (ga) (*ga)[r * c + k] += g[r] * (yv(r, k) / (nx * ny) - cs * xv(r, k) / (nx * nx));
        if (gb) (*gb)[r * c + k] += g[r] * (xv(r, k) / (nx * ny) - cs * yv(r, k) / (ny * ny));
      }
    }
  });
}

namespace {
thread_local DetachReplay* g_replay = nullptr;
}

DetachReplay::DetachReplay() : previous_(g_replay) { g_replay = this; }

DetachReplay::~DetachReplay() { g_replay = previous_; }

void DetachReplay::rewind() {
  replaying_ = true;
  cursor_ = 0;
}

DetachReplay* DetachReplay::active() { return g_replay; }

Tensor DetachReplay::detach(const Tensor& value) {
  if (!replaying_) {
    Tensor v;
    v.shape = value.shape;
    v.data = value.data;
    values_.push_back(v);
    return v;
  }
  if (cursor_ >= values_.size() || values_[cursor_].shape != value.shape) {
    fail(ErrorKind::invalid_argument, "detach replay: forward pass diverged from the recorded one");
  }
  return values_[cursor_++];
}

Var stop_gradient(Var a) {
  if (DetachReplay* r = DetachReplay::active()) return a.tape->constant(r->detach(a.value()));
  Tensor v;
  v.shape = a.value().shape;
  v.data = a.value().data;
  return a.tape->constant(std::move(v));
}

Var straight_through(Tensor forward, Var through) {
  Tape& t = *through.tape;
  if (forward.shape != through.value().shape) shape_error("straight_through", forward, through.value());
  forward.grad.clear();
  if (DetachReplay* r = DetachReplay::active()) {
    // Forward value = through + recorded (forward - through).
    Tensor offset = forward;
    for (std::size_t i = 0; i < offset.data.size(); ++i) offset.data[i] -= through.value().data[i];
    offset = r->detach(offset);
    for (std::size_t i = 0; i < offset.data.size(); ++i) forward.data[i] = through.value().data[i] + offset.data[i];
  }
  const std::size_t ia = through.id;
  return t.record(std::move(forward), {through}, [ia](Tape& tp, std::size_t self) {
    const std::vector<double>& g = tp.grad_buffer(self);
    std::vector<double>& ga = tp.grad_buffer(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

}  // namespace dcmrl
