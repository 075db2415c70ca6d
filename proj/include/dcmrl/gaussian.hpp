#pragma once

#include <span>
#include <vector>

#include "dcmrl/tape.hpp"

namespace dcmrl {

inline constexpr double kLogStdMin = -5.0;
inline constexpr double kLogStdMax = 2.0;

// Diagonal Gaussian N(mean, diag(exp(log_std))^2). Contexts, skills, codebook
// codes and the prior are all represented this way.
struct DiagGaussian {
  std::vector<double> mean;
  std::vector<double> log_std;

  DiagGaussian() = default;
  DiagGaussian(std::vector<double> m, std::vector<double> ls);
  static DiagGaussian standard(std::size_t dim);

  std::size_t dim() const { return mean.size(); }
  bool operator==(const DiagGaussian&) const = default;
};

// One distribution per row, recorded on a tape.
struct GaussianBatch {
  Var mean;     // [B, d]
  Var log_std;  // [B, d]

  std::size_t rows() const { return mean.rows(); }
  std::size_t dim() const { return mean.cols(); }
  DiagGaussian row(std::size_t r) const;
};

// Splits a network output [B, 2d] into (mean, log_std), clamping log_std to
// [kLogStdMin, kLogStdMax].
GaussianBatch gaussian_head(Var out, std::size_t dim);
GaussianBatch constant_batch(Tape& tape, std::span<const DiagGaussian> rows);
GaussianBatch stop_gradient(const GaussianBatch& g);

// KL(p || q), closed form.
double kl(const DiagGaussian& p, const DiagGaussian& q);
Var kl(const GaussianBatch& p, const GaussianBatch& q);  // [B, 1]

// mean + exp(log_std) * noise
std::vector<double> sample_reparam(const DiagGaussian& p, std::span<const double> noise);
Var sample_reparam(const GaussianBatch& p, const Tensor& noise);

// log N(x; mean, std) summed over dimensions, [B, 1].
Var log_prob(const GaussianBatch& p, Var x);

// Flat metric embedding concat(mean, log_std) used for code matching and
// cosine similarity.
std::vector<double> embed(const DiagGaussian& p);
Var embed(const GaussianBatch& p);
DiagGaussian unembed(std::span<const double> e);

double euclidean(std::span<const double> a, std::span<const double> b);

// Cosine similarity of the embeddings. Two all-zero embeddings give 0 and set
// *degenerate when provided.
double cosine_sim(const DiagGaussian& a, const DiagGaussian& b, bool* degenerate = nullptr);
Var cosine_sim(const GaussianBatch& a, const GaussianBatch& b);  // [B, 1]

}  // namespace dcmrl
