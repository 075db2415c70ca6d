#include "dcmrl/gaussian.hpp"

#include <cmath>
#include <numbers>

#include "dcmrl/error.hpp"

namespace dcmrl {

namespace {
void require_same_dim(std::size_t a, std::size_t b, const char* op) {
  if (a != b) {
    fail(ErrorKind::invalid_argument,
         std::string(op) + ": dimension mismatch " + std::to_string(a) + " vs " + std::to_string(b));
  }
}
}  // namespace

DiagGaussian::DiagGaussian(std::vector<double> m, std::vector<double> ls) : mean(std::move(m)), log_std(std::move(ls)) {
  require_same_dim(mean.size(), log_std.size(), "DiagGaussian");
}

DiagGaussian DiagGaussian::standard(std::size_t dim) {
  return DiagGaussian(std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0));
}

DiagGaussian GaussianBatch::row(std::size_t r) const {
  const Tensor& m = mean.value();
  const Tensor& s = log_std.value();
  return DiagGaussian(std::vector<double>(m.row_ptr(r), m.row_ptr(r) + m.cols()),
                      std::vector<double>(s.row_ptr(r), s.row_ptr(r) + s.cols()));
}

GaussianBatch gaussian_head(Var out, std::size_t dim) {
  if (out.cols() != 2 * dim) {
    fail(ErrorKind::invalid_argument, "gaussian_head: expected " + std::to_string(2 * dim) + " columns, got " +
                                          std::to_string(out.cols()));
  }
  return GaussianBatch{slice_cols(out, 0, dim), clamp(slice_cols(out, dim, 2 * dim), kLogStdMin, kLogStdMax)};
}

GaussianBatch constant_batch(Tape& tape, std::span<const DiagGaussian> rows) {
  if (rows.empty()) fail(ErrorKind::invalid_argument, "constant_batch: no rows");
  const std::size_t d = rows.front().dim();
  Tensor m(rows.size(), d), s(rows.size(), d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require_same_dim(rows[r].dim(), d, "constant_batch");
    for (std::size_t k = 0; k < d; ++k) {
      m(r, k) = rows[r].mean[k];
      s(r, k) = rows[r].log_std[k];
    }
  }
  return GaussianBatch{tape.constant(std::move(m)), tape.constant(std::move(s))};
}

GaussianBatch stop_gradient(const GaussianBatch& g) {
  return GaussianBatch{stop_gradient(g.mean), stop_gradient(g.log_std)};
}

double kl(const DiagGaussian& p, const DiagGaussian& q) {
  require_same_dim(p.dim(), q.dim(), "kl");
  double total = 0.0;
  for (std::size_t i = 0; i < p.dim(); ++i) {
    const double vp = std::exp(2.0 * p.log_std[i]);
    const double vq = std::exp(2.0 * q.log_std[i]);
    const double dm = p.mean[i] - q.mean[i];
    total += q.log_std[i] - p.log_std[i] + (vp + dm * dm) / (2.0 * vq) - 0.5;
  }
  return total;
}

Var kl(const GaussianBatch& p, const GaussianBatch& q) {
  require_same_dim(p.dim(), q.dim(), "kl");
  if (p.rows() != q.rows()) require_same_dim(p.rows(), q.rows(), "kl rows");
  Var vp = exp(scale(p.log_std, 2.0));
  Var vq = exp(scale(q.log_std, 2.0));
  Var dm = sub(p.mean, q.mean);
  Var ratio = div(add(vp, square(dm)), scale(vq, 2.0));
  Var term = add_scalar(add(sub(q.log_std, p.log_std), ratio), -0.5);
  return sum_cols(term);
}

std::vector<double> sample_reparam(const DiagGaussian& p, std::span<const double> noise) {
  require_same_dim(p.dim(), noise.size(), "sample_reparam");
  std::vector<double> out(p.dim());
  for (std::size_t i = 0; i < p.dim(); ++i) out[i] = p.mean[i] + std::exp(p.log_std[i]) * noise[i];
  return out;
}

Var sample_reparam(const GaussianBatch& p, const Tensor& noise) {
  if (noise.rows() != p.rows() || noise.cols() != p.dim()) {
    fail(ErrorKind::invalid_argument, "sample_reparam: noise " + noise.shape_str() + " vs distribution " +
                                          p.mean.value().shape_str());
  }
  Var eps = p.mean.tape->constant(noise);
  return add(p.mean, mul(exp(p.log_std), eps));
}

Var log_prob(const GaussianBatch& p, Var x) {
  constexpr double kLog2Pi = 1.8378770664093453;
  Var z = div(sub(x, p.mean), exp(p.log_std));
  Var per_dim = add_scalar(add(square(z), scale(p.log_std, 2.0)), kLog2Pi);
  return scale(sum_cols(per_dim), -0.5);
}

std::vector<double> embed(const DiagGaussian& p) {
  std::vector<double> e(p.mean);
  e.insert(e.end(), p.log_std.begin(), p.log_std.end());
  return e;
}

Var embed(const GaussianBatch& p) { return concat_cols({p.mean, p.log_std}); }

DiagGaussian unembed(std::span<const double> e) {
  if (e.size() % 2 != 0) fail(ErrorKind::invalid_argument, "unembed: odd embedding length");
  const std::size_t d = e.size() / 2;
  return DiagGaussian(std::vector<double>(e.begin(), e.begin() + d), std::vector<double>(e.begin() + d, e.end()));
}

double euclidean(std::span<const double> a, std::span<const double> b) {
  require_same_dim(a.size(), b.size(), "euclidean");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

double cosine_sim(const DiagGaussian& a, const DiagGaussian& b, bool* degenerate) {
  require_same_dim(a.dim(), b.dim(), "cosine_sim");
  const std::vector<double> ea = embed(a), eb = embed(b);
  double d = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    d += ea[i] * eb[i];
    na += ea[i] * ea[i];
    nb += eb[i] * eb[i];
  }
  const double denom = std::sqrt(na) * std::sqrt(nb);
  if (degenerate) *degenerate = denom == 0.0;
  return denom == 0.0 ? 0.0 : d / denom;
}

Var cosine_sim(const GaussianBatch& a, const GaussianBatch& b) {
  require_same_dim(a.dim(), b.dim(), "cosine_sim");
  return cosine_rows(embed(a), embed(b));
}

}  // namespace dcmrl
