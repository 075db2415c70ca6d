#include "dcmrl/skill.hpp"

#include <algorithm>
#include <cmath>

#include "dcmrl/error.hpp"

namespace dcmrl {

std::vector<std::size_t> hidden_dims(std::size_t in, int hidden, int layers, std::size_t out) {
  std::vector<std::size_t> dims{in};
  for (int l = 0; l < layers; ++l) dims.push_back(std::size_t(hidden));
  dims.push_back(out);
  return dims;
}

SkillModels::SkillModels(const PretrainConfig& config, Rng& init)
    : horizon_(config.horizon), skill_dim_(std::size_t(config.skill_dim)) {
  if (config.horizon < 2) fail(ErrorKind::config, "pretrain.horizon must be >= 2");
  encoder_ = Mlp("skill_encoder", hidden_dims(window_dim(), config.hidden, config.layers, 2 * skill_dim_),
                 Activation::tanh, init);
  prior_ = Mlp("skill_prior", hidden_dims(kStateDim, config.hidden, config.layers, 2 * skill_dim_), Activation::tanh,
               init);
  low_ = Mlp("low_policy", hidden_dims(kStateDim + skill_dim_, config.hidden, config.layers, 2 * kActionDim),
             Activation::tanh, init);
}

GaussianBatch SkillModels::encode(Tape& tape, Var windows, bool trainable) {
  return gaussian_head(encoder_.forward(tape, windows, trainable), skill_dim_);
}

GaussianBatch SkillModels::prior(Tape& tape, Var s0, bool trainable) {
  return gaussian_head(prior_.forward(tape, s0, trainable), skill_dim_);
}

GaussianBatch SkillModels::low_policy(Tape& tape, Var states_and_skills, bool trainable) {
  GaussianBatch g = gaussian_head(low_.forward(tape, states_and_skills, trainable), kActionDim);
  g.mean = tanh(g.mean);
  return g;
}

DiagGaussian SkillModels::prior_value(const State& s0) const {
  const Tensor out = prior_.infer(Tensor(1, kStateDim, std::vector<double>(s0.begin(), s0.end())));
  DiagGaussian g = DiagGaussian::standard(skill_dim_);
  for (std::size_t i = 0; i < skill_dim_; ++i) {
    g.mean[i] = out.data[i];
    g.log_std[i] = std::clamp(out.data[skill_dim_ + i], kLogStdMin, kLogStdMax);
  }
  return g;
}

Action SkillModels::act(const State& s, std::span<const double> z) const {
  const DiagGaussian g = low_value(s, z);
  return Action{g.mean[0], g.mean[1]};
}

DiagGaussian SkillModels::low_value(const State& s, std::span<const double> z) const {
  if (z.size() != skill_dim_) {
    fail(ErrorKind::invalid_argument, "act: skill has dimension " + std::to_string(z.size()) + ", expected " +
                                          std::to_string(skill_dim_));
  }
  Tensor in(1, kStateDim + skill_dim_);
  std::copy(s.begin(), s.end(), in.data.begin());
  std::copy(z.begin(), z.end(), in.data.begin() + kStateDim);
  const Tensor out = low_.infer(in);
  DiagGaussian g = DiagGaussian::standard(kActionDim);
  for (std::size_t i = 0; i < kActionDim; ++i) {
    g.mean[i] = std::tanh(out.data[i]);
    g.log_std[i] = std::clamp(out.data[kActionDim + i], kLogStdMin, kLogStdMax);
  }
  return g;
}

std::vector<const Parameter*> SkillModels::all_parameters() const {
  std::vector<const Parameter*> ps = encoder_.parameters();
  for (const Parameter* p : prior_.parameters()) ps.push_back(p);
  for (const Parameter* p : low_.parameters()) ps.push_back(p);
  return ps;
}

void SkillModels::load_from(const Checkpoint& ck) {
  ck.restore(encoder_.parameters());
  ck.restore(prior_.parameters());
  ck.restore(low_.parameters());
}

Window sample_window(const OfflineDataset& data, int horizon, Rng& rng) {
  if (data.trajectories.empty()) fail(ErrorKind::invalid_argument, "sample_window: empty dataset");
  const std::size_t t = rng.index(data.trajectories.size());
  const DatasetTrajectory& tr = data.trajectories[t];
  if (tr.size() < std::size_t(horizon)) {
    fail(ErrorKind::invalid_argument, "sample_window: trajectory " + std::to_string(t) + " shorter than horizon");
  }
  const std::size_t off = rng.index(tr.size() - std::size_t(horizon) + 1);
  Window w;
  w.trajectory = t;
  w.offset = off;
  w.states.assign(tr.states.begin() + std::ptrdiff_t(off), tr.states.begin() + std::ptrdiff_t(off + horizon));
  w.actions.assign(tr.actions.begin() + std::ptrdiff_t(off), tr.actions.begin() + std::ptrdiff_t(off + horizon));
  return w;
}

Tensor flatten_windows(std::span<const Window> windows) {
  const std::size_t k = windows.front().states.size();
  Tensor out(windows.size(), k * (kStateDim + kActionDim));
  for (std::size_t b = 0; b < windows.size(); ++b) {
    double* row = out.row_ptr(b);
    for (std::size_t t = 0; t < k; ++t) {
      for (double v : windows[b].states[t]) *row++ = v;
      for (double v : windows[b].actions[t]) *row++ = v;
    }
  }
  return out;
}

Tensor stack_states(std::span<const Window> windows) {
  const std::size_t k = windows.front().states.size();
  Tensor out(windows.size() * k, kStateDim);
  for (std::size_t b = 0; b < windows.size(); ++b) {
    for (std::size_t t = 0; t < k; ++t) std::copy(windows[b].states[t].begin(), windows[b].states[t].end(), out.row_ptr(b * k + t));
  }
  return out;
}

Tensor stack_actions(std::span<const Window> windows) {
  const std::size_t k = windows.front().actions.size();
  Tensor out(windows.size() * k, kActionDim);
  for (std::size_t b = 0; b < windows.size(); ++b) {
    for (std::size_t t = 0; t < k; ++t) {
      std::copy(windows[b].actions[t].begin(), windows[b].actions[t].end(), out.row_ptr(b * k + t));
    }
  }
  return out;
}

Tensor initial_states(std::span<const Window> windows) {
  Tensor out(windows.size(), kStateDim);
  for (std::size_t b = 0; b < windows.size(); ++b) std::copy(windows[b].s0().begin(), windows[b].s0().end(), out.row_ptr(b));
  return out;
}

Var pretrain_objective(Tape& tape, SkillModels& models, std::span<const Window> batch, const Tensor& noise,
                       double alpha, PretrainLosses& losses) {
  const double inv_b = 1.0 / double(batch.size());
  const std::size_t k = std::size_t(models.horizon());
  GaussianBatch q = models.encode(tape, tape.constant(flatten_windows(batch)));
  Var z = sample_reparam(q, noise);
  GaussianBatch pi = models.low_policy(tape, concat_cols({tape.constant(stack_states(batch)), repeat_rows(z, k)}));
  Var recon = scale(sum(log_prob(pi, tape.constant(stack_actions(batch)))), -inv_b);

  const std::size_t d = models.skill_dim();
  GaussianBatch unit{tape.constant(Tensor(batch.size(), d)), tape.constant(Tensor(batch.size(), d))};
  Var unit_kl = scale(sum(kl(q, unit)), alpha * inv_b);

  GaussianBatch p = models.prior(tape, tape.constant(initial_states(batch)));
  Var prior_kl = scale(sum(kl(stop_gradient(q), p)), inv_b);

  losses.reconstruction = recon.value().item();
  losses.unit_kl = unit_kl.value().item();
  losses.prior_kl = prior_kl.value().item();
  return add(add(recon, unit_kl), prior_kl);
}

SkillPretrainer::SkillPretrainer(SkillModels& models, const PretrainConfig& config)
    : models_(&models), config_(config) {
  std::vector<Parameter*> main = models.encoder_parameters();
  for (Parameter* p : models.low_parameters()) main.push_back(p);
  main_ = Adam(main, AdamConfig{.lr = config.lr});
  prior_ = Adam(models.prior_parameters(), AdamConfig{.lr = config.lr});
}

PretrainLosses SkillPretrainer::step(std::span<const Window> batch, Rng& rng) {
  Tensor noise(batch.size(), models_->skill_dim());
  for (double& v : noise.data) v = rng.normal();
  main_.zero_grad();
  prior_.zero_grad();
  PretrainLosses losses;
  Tape tape;
  Var total = pretrain_objective(tape, *models_, batch, noise, config_.alpha, losses);
  if (!std::isfinite(total.value().item())) fail(ErrorKind::numeric, "pretrain: non-finite loss, step aborted");
  tape.backward(total);
  // Adam validates every gradient before touching parameters; check the prior
  // optimizer first so a failure there cannot follow a completed main step.
  for (const Parameter* p : prior_.params()) {
    for (double g : p->value.grad) {
      if (!std::isfinite(g)) fail(ErrorKind::numeric, "pretrain: non-finite gradient in " + p->name);
    }
  }
  main_.step();
  prior_.step();
  return losses;
}

double action_log_likelihood(SkillModels& models, std::span<const Window> windows) {
  Tape tape;
  GaussianBatch q = models.encode(tape, tape.constant(flatten_windows(windows)), false);
  const std::size_t k = std::size_t(models.horizon());
  GaussianBatch pi = models.low_policy(
      tape, concat_cols({tape.constant(stack_states(windows)), repeat_rows(q.mean, k)}), false);
  return mean(log_prob(pi, tape.constant(stack_actions(windows)))).value().item();
}

double mean_prior_kl(SkillModels& models, std::span<const Window> windows) {
  Tape tape;
  GaussianBatch q = models.encode(tape, tape.constant(flatten_windows(windows)), false);
  GaussianBatch p = models.prior(tape, tape.constant(initial_states(windows)), false);
  return mean(kl(q, p)).value().item();
}

SkillRollout rollout_skill(MazeEnv& env, const SkillModels& models, std::span<const double> z) {
  if (env.done()) fail(ErrorKind::invalid_argument, "rollout_skill: episode already done");
  SkillRollout out;
  for (int t = 0; t < models.horizon() && !env.done(); ++t) {
    const State s = env.state();
    const Action a = models.act(s, z);
    const StepResult r = env.step(a);
    out.transitions.push_back(Transition{s, a, r.reward, r.done, r.state});
    out.reward += r.reward;
    out.success = out.success || r.success;
  }
  return out;
}

}  // namespace dcmrl
