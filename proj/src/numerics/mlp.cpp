#include "dcmrl/mlp.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "dcmrl/error.hpp"

namespace dcmrl {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
}

Mlp::Mlp(std::string name, std::vector<std::size_t> dims, Activation activation, Rng& rng)
    : name_(std::move(name)), dims_(std::move(dims)), activation_(activation) {
  if (dims_.size() < 2) fail(ErrorKind::invalid_argument, "Mlp " + name_ + " needs at least input and output dims");
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const std::size_t fi = dims_[l], fo = dims_[l + 1];
    const double bound = std::sqrt(6.0 / double(fi + fo));
    Tensor w(fi, fo);
    for (double& v : w.data) v = rng.uniform(-bound, bound);
    weights_.emplace_back(name_ + ".w" + std::to_string(l), std::move(w));
    biases_.emplace_back(name_ + ".b" + std::to_string(l), Tensor(1, fo));
  }
}

Var Mlp::forward(Tape& tape, Var x, bool trainable) {
  if (x.cols() != in_dim()) {
    fail(ErrorKind::invalid_argument, "Mlp " + name_ + ": input has " + std::to_string(x.cols()) +
                                          " columns, expected " + std::to_string(in_dim()));
  }
  Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Var w = trainable ? tape.leaf(weights_[l]) : tape.constant(weights_[l].value);
    Var b = trainable ? tape.leaf(biases_[l]) : tape.constant(biases_[l].value);
    h = add_row(matmul(h, w), b);
    if (l + 1 < weights_.size()) h = activation_ == Activation::tanh ? tanh(h) : relu(h);
  }
  return h;
}

Tensor Mlp::infer(const Tensor& x) const {
  if (x.cols() != in_dim()) {
    fail(ErrorKind::invalid_argument, "Mlp " + name_ + ": input has " + std::to_string(x.cols()) +
                                          " columns, expected " + std::to_string(in_dim()));
  }
  RowMat h = Eigen::Map<const RowMat>(x.data.data(), Eigen::Index(x.rows()), Eigen::Index(x.cols()));
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const Tensor& w = weights_[l].value;
    const Tensor& b = biases_[l].value;
    RowMat next = h * Eigen::Map<const RowMat>(w.data.data(), Eigen::Index(w.rows()), Eigen::Index(w.cols()));
    next.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data.data(), Eigen::Index(b.cols()));
    if (l + 1 < weights_.size()) {
      if (activation_ == Activation::tanh) {
        next = next.array().tanh();
      } else {
        next = next.array().max(0.0);
      }
    }
    h = std::move(next);
  }
  Tensor out(std::size_t(h.rows()), std::size_t(h.cols()));
  Eigen::Map<RowMat>(out.data.data(), h.rows(), h.cols()) = h;
  return out;
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> ps;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    ps.push_back(&weights_[l]);
    ps.push_back(&biases_[l]);
  }
  return ps;
}

std::vector<const Parameter*> Mlp::parameters() const {
  std::vector<const Parameter*> ps;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    ps.push_back(&weights_[l]);
    ps.push_back(&biases_[l]);
  }
  return ps;
}

void Mlp::polyak_from(const Mlp& source, double tau) {
  if (source.dims_ != dims_) fail(ErrorKind::invalid_argument, "polyak: architecture mismatch for " + name_);
  auto blend = [tau](Parameter& dst, const Parameter& src) {
    for (std::size_t i = 0; i < dst.value.size(); ++i) {
      dst.value.data[i] = (1.0 - tau) * dst.value.data[i] + tau * src.value.data[i];
    }
  };
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    blend(weights_[l], source.weights_[l]);
    blend(biases_[l], source.biases_[l]);
  }
}

bool Mlp::init_from_prefix(const Mlp& source) {
  if (source.dims_.size() != dims_.size() || source.in_dim() > in_dim()) return false;
  for (std::size_t l = 1; l < dims_.size(); ++l) {
    if (source.dims_[l] != dims_[l]) return false;
  }
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    biases_[l].value = source.biases_[l].value;
    if (l > 0) {
      weights_[l].value = source.weights_[l].value;
      continue;
    }
    Tensor& w = weights_[0].value;
    std::fill(w.data.begin(), w.data.end(), 0.0);
    const Tensor& src = source.weights_[0].value;
    std::copy(src.data.begin(), src.data.end(), w.data.begin());
  }
  return true;
}

}  // namespace dcmrl
