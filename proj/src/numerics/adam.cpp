#include "dcmrl/adam.hpp"

#include <cmath>

#include "dcmrl/error.hpp"

namespace dcmrl {

Adam::Adam(std::vector<Parameter*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
    if (p->value.grad.size() != p->value.size()) p->value.zero_grad();
  }
}

void Adam::step() {
  for (const Parameter* p : params_) {
    if (p->value.grad.size() != p->value.size()) {
      fail(ErrorKind::invalid_argument, "adam: gradient for " + p->name + " not populated");
    }
    for (double g : p->value.grad) {
      if (!std::isfinite(g)) fail(ErrorKind::numeric, "adam: non-finite gradient in parameter " + p->name);
    }
  }
  ++step_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, double(step_));
  const double c2 = 1.0 - std::pow(b2, double(step_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& t = params_[k]->value;
    std::vector<double>& m = m_[k];
    std::vector<double>& v = v_[k];
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double g = t.grad[i];
      m[i] = b1 * m[i] + (1.0 - b1) * g;
      v[i] = b2 * v[i] + (1.0 - b2) * g * g;
      const double mh = m[i] / c1;
      const double vh = v[i] / c2;
      t.data[i] -= config_.lr * mh / (std::sqrt(vh) + config_.eps);
    }
  }
}

void Adam::zero_grad() {
  for (Parameter* p : params_) p->value.zero_grad();
}

}  // namespace dcmrl
