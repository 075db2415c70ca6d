#pragma once

#include <vector>

#include "dcmrl/adam.hpp"
#include "dcmrl/checkpoint.hpp"
#include "dcmrl/dataset.hpp"
#include "dcmrl/gaussian.hpp"
#include "dcmrl/mlp.hpp"

namespace dcmrl {

struct PretrainConfig {
  int horizon = 10;      // K, steps per skill
  int skill_dim = 8;     // d_z
  double alpha = 1e-2;   // weight of KL(q || N(0, I))
  int batch = 32;
  int steps = 4000;
  int hidden = 64;
  int layers = 2;
  double lr = 3e-4;
};

std::vector<std::size_t> hidden_dims(std::size_t in, int hidden, int layers, std::size_t out);

// Skill encoder q(Z|s,a), skill prior p(Z|s_0) and low-level policy
// pi(a_t|s_t,z). The low-level policy is frozen once pre-training ends.
class SkillModels {
 public:
  SkillModels() = default;
  SkillModels(const PretrainConfig& config, Rng& init);

  int horizon() const { return horizon_; }
  std::size_t skill_dim() const { return skill_dim_; }
  std::size_t window_dim() const { return std::size_t(horizon_) * (kStateDim + kActionDim); }

  // windows: [B, K*(S+A)], step-major (s_0, a_0, s_1, a_1, ...).
  GaussianBatch encode(Tape& tape, Var windows, bool trainable = true);
  GaussianBatch prior(Tape& tape, Var s0, bool trainable = true);
  // states_and_skills: [B, S + d_z]. Mean is tanh-squashed to [-1, 1].
  GaussianBatch low_policy(Tape& tape, Var states_and_skills, bool trainable = true);

  DiagGaussian prior_value(const State& s0) const;
  // Deterministic skill execution: mean of pi(.|s, z).
  Action act(const State& s, std::span<const double> z) const;
  // pi(.|s, z) with the tanh-squashed mean.
  DiagGaussian low_value(const State& s, std::span<const double> z) const;

  std::vector<Parameter*> encoder_parameters() { return encoder_.parameters(); }
  std::vector<Parameter*> prior_parameters() { return prior_.parameters(); }
  const Mlp& prior_network() const { return prior_; }
  std::vector<Parameter*> low_parameters() { return low_.parameters(); }
  std::vector<const Parameter*> all_parameters() const;
  std::vector<const Parameter*> low_parameters_const() const { return low_.parameters(); }

  void save_to(Checkpoint& ck) const { ck.put(all_parameters()); }
  void load_from(const Checkpoint& ck);

 private:
  int horizon_ = 10;
  std::size_t skill_dim_ = 8;
  Mlp encoder_;
  Mlp prior_;
  Mlp low_;
};

// A K-step slice of one dataset trajectory.
struct Window {
  std::vector<State> states;
  std::vector<Action> actions;
  std::size_t trajectory = 0;
  std::size_t offset = 0;
  const State& s0() const { return states.front(); }
};

// Uniform trajectory, then uniform contiguous offset.
Window sample_window(const OfflineDataset& data, int horizon, Rng& rng);

Tensor flatten_windows(std::span<const Window> windows);
// [B*K, S] states and [B*K, A] actions, window-major.
Tensor stack_states(std::span<const Window> windows);
Tensor stack_actions(std::span<const Window> windows);
Tensor initial_states(std::span<const Window> windows);

struct PretrainLosses {
  double reconstruction = 0.0;  // -sum_t log pi(a_t|s_t,z), batch mean
  double unit_kl = 0.0;         // alpha * KL(q || N(0,I)), batch mean
  double prior_kl = 0.0;        // KL(sg[q] || p), batch mean
};

// Builds the pre-training objective on `tape`. Returns the scalar total and
// fills the loss components.
Var pretrain_objective(Tape& tape, SkillModels& models, std::span<const Window> batch, const Tensor& noise,
                       double alpha, PretrainLosses& losses);

class SkillPretrainer {
 public:
  SkillPretrainer(SkillModels& models, const PretrainConfig& config);

  // One Adam step on (q, pi) from the reconstruction and unit-KL terms and on
  // p from the prior term. A non-finite loss or gradient throws
  // Error(numeric) with every parameter left unchanged.
  PretrainLosses step(std::span<const Window> batch, Rng& rng);

  std::uint64_t steps() const { return main_.steps(); }

 private:
  SkillModels* models_;
  PretrainConfig config_;
  Adam main_;
  Adam prior_;
};

// Mean per-step action log-likelihood of `windows` with z = mean of q.
double action_log_likelihood(SkillModels& models, std::span<const Window> windows);
// Mean KL(q(Z|window) || p(Z|s_0)).
double mean_prior_kl(SkillModels& models, std::span<const Window> windows);

struct SkillRollout {
  std::vector<Transition> transitions;
  double reward = 0.0;
  bool success = false;
};

// Executes the deterministic low-level policy for up to K steps.
SkillRollout rollout_skill(MazeEnv& env, const SkillModels& models, std::span<const double> z);

}  // namespace dcmrl
