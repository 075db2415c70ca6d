#include "dcmrl/gqvae.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "dcmrl/error.hpp"

namespace dcmrl {

CodebookMode parse_codebook_mode(const std::string& s) {
  if (s == "gaussian") return CodebookMode::gaussian;
  if (s == "vector") return CodebookMode::vector;
  fail(ErrorKind::config, "unknown codebook mode '" + s + "' (expected gaussian or vector)");
}

NormMode parse_norm_mode(const std::string& s) {
  if (s == "squared") return NormMode::squared;
  if (s == "plain") return NormMode::plain;
  fail(ErrorKind::config, "unknown norm mode '" + s + "' (expected squared or plain)");
}

std::string to_string(CodebookMode m) { return m == CodebookMode::gaussian ? "gaussian" : "vector"; }
std::string to_string(NormMode m) { return m == NormMode::squared ? "squared" : "plain"; }

Codebook::Codebook(std::string name, std::size_t size, std::size_t dim, CodebookMode mode)
    : name_(std::move(name)), dim_(dim), mode_(mode), usage_(size, 0) {
  if (size == 0) fail(ErrorKind::invalid_argument, "codebook " + name_ + ": needs at least one code");
  if (dim == 0) fail(ErrorKind::invalid_argument, "codebook " + name_ + ": zero code dimension");
  if (mode == CodebookMode::gaussian) {
    mean_ = Parameter(name_ + ".mean", Tensor(size, dim));
    log_std_ = Parameter(name_ + ".log_std", Tensor(size, dim));
  } else {
    mean_ = Parameter(name_ + ".codes", Tensor(size, dim));
  }
}

std::vector<double> Codebook::embedding(std::size_t k) const {
  std::vector<double> e(mean_.value.row_ptr(k), mean_.value.row_ptr(k) + dim_);
  if (mode_ == CodebookMode::gaussian) e.insert(e.end(), log_std_.value.row_ptr(k), log_std_.value.row_ptr(k) + dim_);
  return e;
}

Tensor Codebook::embeddings() const {
  Tensor out(size(), embed_dim());
  for (std::size_t k = 0; k < size(); ++k) {
    const std::vector<double> e = embedding(k);
    std::copy(e.begin(), e.end(), out.row_ptr(k));
  }
  return out;
}

DiagGaussian Codebook::code(std::size_t k) const {
  if (mode_ != CodebookMode::gaussian) fail(ErrorKind::invalid_argument, "codebook " + name_ + " is in vector mode");
  return unembed(embedding(k));
}

void Codebook::set_embedding(std::size_t k, std::span<const double> e) {
  if (e.size() != embed_dim()) fail(ErrorKind::invalid_argument, "codebook " + name_ + ": embedding length mismatch");
  std::copy(e.begin(), e.begin() + std::ptrdiff_t(dim_), mean_.value.row_ptr(k));
  if (mode_ == CodebookMode::gaussian) {
    double* ls = log_std_.value.row_ptr(k);
    for (std::size_t i = 0; i < dim_; ++i) ls[i] = std::clamp(e[dim_ + i], kLogStdMin, kLogStdMax);
  }
}

Match Codebook::nearest(std::span<const double> e) const {
  if (e.size() != embed_dim()) {
    fail(ErrorKind::invalid_argument, "codebook " + name_ + ": query has length " + std::to_string(e.size()) +
                                          ", codes have " + std::to_string(embed_dim()));
  }
  Match best{0, std::numeric_limits<double>::infinity()};
  for (std::size_t k = 0; k < size(); ++k) {
    const double d = euclidean(e, embedding(k));
    if (d < best.distance) best = Match{k, d};
  }
  return best;
}

Match Codebook::match(std::span<const double> e) {
  const Match m = nearest(e);
  ++usage_[m.index];
  return m;
}

void Codebook::set_usage(std::vector<std::uint64_t> usage) {
  if (usage.size() != usage_.size()) fail(ErrorKind::invalid_argument, name_ + ": usage has wrong length");
  usage_ = std::move(usage);
}

void Codebook::reset_usage() { std::fill(usage_.begin(), usage_.end(), 0); }

double Codebook::usage_entropy() const {
  double total = 0.0;
  for (std::uint64_t u : usage_) total += double(u);
  if (total == 0.0) return 0.0;
  double h = 0.0;
  for (std::uint64_t u : usage_) {
    if (u > 0) {
      const double p = double(u) / total;
      h -= p * std::log(p);
    }
  }
  return h;
}

Var Codebook::table(Tape& tape, bool trainable) {
  Var m = trainable ? tape.leaf(mean_) : tape.constant(mean_.value);
  if (mode_ == CodebookMode::vector) return m;
  Var s = trainable ? tape.leaf(log_std_) : tape.constant(log_std_.value);
  return concat_cols({m, s});
}

std::vector<Parameter*> Codebook::parameters() {
  if (mode_ == CodebookMode::vector) return {&mean_};
  return {&mean_, &log_std_};
}

std::vector<const Parameter*> Codebook::parameters() const {
  if (mode_ == CodebookMode::vector) return {&mean_};
  return {&mean_, &log_std_};
}

void Codebook::project() {
  if (mode_ != CodebookMode::gaussian) return;
  for (double& v : log_std_.value.data) v = std::clamp(v, kLogStdMin, kLogStdMax);
}

void Codebook::initialize(const Tensor& embeddings, Rng& rng) {
  if (embeddings.cols() != embed_dim()) fail(ErrorKind::invalid_argument, "codebook " + name_ + ": bad seed batch");
  const std::size_t n = embeddings.rows();
  if (n == 0) fail(ErrorKind::invalid_argument, "codebook " + name_ + ": empty seed batch");
  auto row = [&](std::size_t r) { return std::span<const double>(embeddings.row_ptr(r), embed_dim()); };
  std::vector<double> nearest_dist(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.index(n);
  for (std::size_t k = 0; k < size(); ++k) {
    std::vector<double> e(row(pick).begin(), row(pick).end());
    if (k > 0 && nearest_dist[pick] == 0.0) {
      // Fewer distinct points than codes: jitter a duplicate.
      for (double& v : e) v += 0.01 * rng.normal();
    }
    set_embedding(k, e);
    const std::vector<double> placed = embedding(k);
    for (std::size_t r = 0; r < n; ++r) nearest_dist[r] = std::min(nearest_dist[r], euclidean(row(r), placed));
    pick = std::size_t(std::max_element(nearest_dist.begin(), nearest_dist.end()) - nearest_dist.begin());
  }
  reset_usage();
  initialized_ = true;
}

std::optional<std::vector<std::size_t>> Codebook::maintain(const Tensor& recent, Rng& rng, double sigma) {
  if (recent.rows() == 0) return std::nullopt;
  if (recent.cols() != embed_dim()) fail(ErrorKind::invalid_argument, "codebook " + name_ + ": bad recent batch");
  std::vector<std::size_t> replaced;
  for (std::size_t k = 0; k < size(); ++k) {
    if (usage_[k] != 0) continue;
    const std::size_t r = rng.index(recent.rows());
    std::vector<double> e(recent.row_ptr(r), recent.row_ptr(r) + embed_dim());
    for (double& v : e) v += sigma * rng.normal();
    set_embedding(k, e);
    replaced.push_back(k);
  }
  reset_usage();
  return replaced;
}

void Codebook::write_csv(std::ostream& out) const {
  out << "index,usage";
  for (std::size_t i = 0; i < dim_; ++i) out << (mode_ == CodebookMode::gaussian ? ",mean" : ",code") << i;
  if (mode_ == CodebookMode::gaussian) {
    for (std::size_t i = 0; i < dim_; ++i) out << ",log_std" << i;
  }
  out << '\n';
  const auto old = out.precision(17);
  for (std::size_t k = 0; k < size(); ++k) {
    out << k << ',' << usage_[k];
    for (double v : embedding(k)) out << ',' << v;
    out << '\n';
  }
  out.precision(old);
}

void CodebookMaintenance::remember(const Tensor& embeddings) {
  if (embeddings.rows() == 0) return;
  if (recent_.cols() != embeddings.cols()) {
    recent_ = Tensor(0, embeddings.cols());
    next_ = 0;
  }
  for (std::size_t r = 0; r < embeddings.rows(); ++r) {
    const double* src = embeddings.row_ptr(r);
    if (recent_.rows() < capacity_) {
      recent_.data.insert(recent_.data.end(), src, src + embeddings.cols());
      recent_.shape[0] += 1;
    } else {
      std::copy(src, src + embeddings.cols(), recent_.row_ptr(next_));
      next_ = (next_ + 1) % capacity_;
    }
  }
}

bool CodebookMaintenance::tick(Codebook& cb, Rng& rng, std::optional<std::vector<std::size_t>>* replaced) {
  ++updates_;
  if (interval_ <= 0 || updates_ % std::uint64_t(interval_) != 0) return false;
  auto r = cb.maintain(recent_, rng);
  if (replaced) *replaced = std::move(r);
  return true;
}

namespace {

Var row_norms(Var diff, NormMode norm) {
  Var sq = sum_cols(square(diff));
  if (norm == NormMode::squared) return sq;
  return sqrt(add_scalar(sq, 1e-12));
}

}  // namespace

GqTerms gq_loss(Var encoder_embed, Var code_embed, Var x, Var x_recon, double mu, NormMode norm) {
  if (!(mu > 0.0)) fail(ErrorKind::invalid_argument, "gq_loss: weight must be positive");
  GqTerms t;
  t.encoder_commit = sum(row_norms(sub(stop_gradient(code_embed), encoder_embed), norm));
  t.code_commit = scale(sum(row_norms(sub(code_embed, stop_gradient(encoder_embed)), norm)), mu);
  t.reconstruction = sum(row_norms(sub(x_recon, x), norm));
  t.total = add(add(t.encoder_commit, t.code_commit), t.reconstruction);
  return t;
}

Quantized quantize(Tape& tape, Codebook& cb, const GaussianBatch& encoder, bool trainable_codes,
                   bool use_encoder_output, bool count_usage) {
  if (cb.dim() != encoder.dim()) {
    fail(ErrorKind::invalid_argument, "quantize: encoder dimension " + std::to_string(encoder.dim()) +
                                          " vs codebook " + std::to_string(cb.dim()));
  }
  Quantized q;
  q.point = cb.mode() == CodebookMode::vector;
  q.encoder_embed = q.point ? encoder.mean : embed(encoder);
  const Tensor& e = q.encoder_embed.value();
  q.index.resize(e.rows());
  for (std::size_t r = 0; r < e.rows(); ++r) {
    std::span<const double> row(e.row_ptr(r), e.cols());
    q.index[r] = (count_usage ? cb.match(row) : cb.nearest(row)).index;
  }
  q.code_embed = gather_rows(cb.table(tape, trainable_codes), q.index);
  if (use_encoder_output) {
    q.out = encoder;
    return q;
  }
  const Tensor& codes = q.code_embed.value();
  const std::size_t d = cb.dim();
  Tensor mean(codes.rows(), d);
  for (std::size_t r = 0; r < codes.rows(); ++r) std::copy(codes.row_ptr(r), codes.row_ptr(r) + d, mean.row_ptr(r));
  q.out.mean = straight_through(std::move(mean), encoder.mean);
  if (q.point) {
    q.out.log_std = encoder.log_std;
  } else {
    Tensor ls(codes.rows(), d);
    for (std::size_t r = 0; r < codes.rows(); ++r) std::copy(codes.row_ptr(r) + d, codes.row_ptr(r) + 2 * d, ls.row_ptr(r));
    q.out.log_std = straight_through(std::move(ls), encoder.log_std);
  }
  return q;
}

Var draw(const Quantized& q, const Tensor& noise) {
  if (q.point) return q.out.mean;
  return sample_reparam(q.out, noise);
}

}  // namespace dcmrl
