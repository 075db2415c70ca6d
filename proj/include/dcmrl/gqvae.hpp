#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcmrl/gaussian.hpp"
#include "dcmrl/rng.hpp"

namespace dcmrl {

enum class CodebookMode { gaussian, vector };
enum class NormMode { squared, plain };

CodebookMode parse_codebook_mode(const std::string& s);
NormMode parse_norm_mode(const std::string& s);
std::string to_string(CodebookMode m);
std::string to_string(NormMode m);

struct Match {
  std::size_t index = 0;
  double distance = 0.0;
};

// K learnable codes. Gaussian codes are (mean, log_std) pairs of dimension d
// and are compared through embed() = concat(mean, log_std), length 2d. Vector
// codes are bare d-vectors compared against the encoder's mean head.
class Codebook {
 public:
  Codebook() = default;
  Codebook(std::string name, std::size_t size, std::size_t dim, CodebookMode mode);

  std::size_t size() const { return usage_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t embed_dim() const { return mode_ == CodebookMode::gaussian ? 2 * dim_ : dim_; }
  CodebookMode mode() const { return mode_; }
  const std::string& name() const { return name_; }

  std::vector<double> embedding(std::size_t k) const;
  Tensor embeddings() const;  // [K, embed_dim]
  DiagGaussian code(std::size_t k) const;
  void set_embedding(std::size_t k, std::span<const double> e);

  // argmin_k ||e - embed(O^k)||, lowest index on ties. match() also counts
  // the winner in the usage counters; nearest() does not.
  Match nearest(std::span<const double> e) const;
  Match match(std::span<const double> e);

  const std::vector<std::uint64_t>& usage() const { return usage_; }
  void reset_usage();
  void set_usage(std::vector<std::uint64_t> usage);
  // Shannon entropy (nats) of the usage distribution; 0 when nothing matched.
  double usage_entropy() const;

  // [K, embed_dim] table of codes as trainable leaves (or constants).
  Var table(Tape& tape, bool trainable = true);
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  // Clamps code log_std back into [kLogStdMin, kLogStdMax] after an update.
  void project();

  // Farthest-point seeding from a batch of encoder embeddings.
  void initialize(const Tensor& embeddings, Rng& rng);
  bool initialized() const { return initialized_; }
  void mark_initialized() { initialized_ = true; }

  // Every code with zero usage is reset to a uniformly drawn row of `recent`
  // plus N(0, sigma^2) noise; usage counters are then reset. Returns the
  // replaced indices, or nullopt (nothing changed) if `recent` is empty.
  std::optional<std::vector<std::size_t>> maintain(const Tensor& recent, Rng& rng, double sigma = 0.01);

  void write_csv(std::ostream& out) const;

 private:
  std::string name_;
  std::size_t dim_ = 0;
  CodebookMode mode_ = CodebookMode::gaussian;
  Parameter mean_;     // [K, d]; the code vectors in vector mode
  Parameter log_std_;  // [K, d]; unused in vector mode
  std::vector<std::uint64_t> usage_;
  bool initialized_ = false;
};

// Recent encoder outputs plus the update counter that triggers maintenance.
class CodebookMaintenance {
 public:
  explicit CodebookMaintenance(int interval = 200, std::size_t capacity = 512)
      : interval_(interval), capacity_(capacity) {}

  void remember(const Tensor& embeddings);
  const Tensor& recent() const { return recent_; }
  // Counts one update; every `interval` updates runs cb.maintain(). Returns
  // true when maintenance was attempted this call.
  bool tick(Codebook& cb, Rng& rng, std::optional<std::vector<std::size_t>>* replaced = nullptr);
  std::uint64_t updates() const { return updates_; }

 private:
  int interval_;
  std::size_t capacity_;
  std::size_t next_ = 0;
  Tensor recent_{0, 0};
  std::uint64_t updates_ = 0;
};

struct GqTerms {
  Var total;
  Var encoder_commit;  // ||sg[embed(O)] - embed(O~)||, trains the encoder
  Var code_commit;     // mu * ||embed(O) - sg[embed(O~)]||, trains the codes
  Var reconstruction;  // ||X~ - X||, trains the decoder
};

// Three-term quantization loss summed over the batch rows. encoder_embed and
// code_embed are [B, E]; x and x_recon are [B, n].
GqTerms gq_loss(Var encoder_embed, Var code_embed, Var x, Var x_recon, double mu, NormMode norm);

struct Quantized {
  std::vector<std::size_t> index;
  Var encoder_embed;  // embed(O~), or the mean head in vector mode
  Var code_embed;     // matched rows of the code table
  // Downstream distribution: the matched code's parameters in the forward
  // pass, gradients routed to the encoder output. In vector mode only `mean`
  // carries the code; log_std is the encoder's and `point` is set.
  GaussianBatch out;
  bool point = false;
};

// Matches every row of `encoder` against `cb` and builds the straight-through
// output. use_encoder_output passes O~ downstream instead of the code.
Quantized quantize(Tape& tape, Codebook& cb, const GaussianBatch& encoder, bool trainable_codes = true,
                   bool use_encoder_output = false, bool count_usage = true);

// Reparameterized draw from q.out, or its mean when q is a point value.
Var draw(const Quantized& q, const Tensor& noise);

}  // namespace dcmrl
