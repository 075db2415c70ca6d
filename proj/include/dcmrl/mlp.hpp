#pragma once

#include <string>
#include <vector>

#include "dcmrl/rng.hpp"
#include "dcmrl/tape.hpp"

namespace dcmrl {

enum class Activation { tanh, relu };

// Feed-forward network: affine layers with `activation` between them and a
// linear output layer. Weights are stored [fan_in, fan_out] so a batch
// [B, fan_in] maps to [B, fan_out].
class Mlp {
 public:
  Mlp() = default;
  // dims = {in, hidden..., out}. Weights ~ U(+-sqrt(6/(fan_in+fan_out))), biases 0.
  Mlp(std::string name, std::vector<std::size_t> dims, Activation activation, Rng& rng);

  // trainable=false records the weights as constants: gradients still flow
  // to `x` but never to this network's parameters.
  Var forward(Tape& tape, Var x, bool trainable = true);
  // Tape-free evaluation for rollouts and targets.
  Tensor infer(const Tensor& x) const;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  std::size_t in_dim() const { return dims_.front(); }
  std::size_t out_dim() const { return dims_.back(); }
  const std::vector<std::size_t>& dims() const { return dims_; }
  const std::string& name() const { return name_; }

  // target <- (1 - tau) * target + tau * source
  void polyak_from(const Mlp& source, double tau);
  // Copies `source`, whose input is a prefix of this network's input; weights
  // of the extra input columns are zeroed. Returns false on shape mismatch.
  bool init_from_prefix(const Mlp& source);

 private:
  std::string name_;
  std::vector<std::size_t> dims_;
  Activation activation_ = Activation::tanh;
  std::vector<Parameter> weights_;
  std::vector<Parameter> biases_;
};

}  // namespace dcmrl
