#pragma once

#include <deque>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcmrl/adam.hpp"
#include "dcmrl/gqvae.hpp"
#include "dcmrl/skill.hpp"

namespace dcmrl {

struct GqvaeConfig {
  int context_codes = 16;  // K_C
  int skill_codes = 16;    // K_Z
  double eta = 0.25;       // code weight of the context quantization loss
  double iota = 0.25;      // code weight of the skill quantization loss
  CodebookMode mode = CodebookMode::gaussian;
  NormMode norm = NormMode::squared;
  bool downstream_encoder = false;  // pass O~ downstream instead of the matched code
  int maintenance_interval = 200;
};

struct MetaConfig {
  int context_dim = 8;  // d_c
  double lambda = 1.0;  // weight of L_GQ_Context
  double gamma_skill = 1.0;
  double margin = 0.5;  // triplet epsilon
  double w_triplet = 1e-4;
  double beta_init = 0.1;
  double beta_lr = 0.01;  // step on log(beta)
  double target_kl = 0.1;
  int n_c = 20;
  int n_mini = 100;
  int task_batch = 8;  // N
  int skill_batch = 32;  // high-level transitions per task per update
  int bc_windows = 4;    // replayed K-step windows per task per update
  double discount = 0.99;
  double tau = 0.005;
  int buffer_capacity = 20000;
  int episodes_per_task = 50;   // E
  int warmup_episodes = 2;      // per task, before any update
  int updates_per_iter = 2;
  int hidden = 64;
  int layers = 2;
  double lr = 3e-4;
  bool init_high_from_prior = true;  // start pi(Z|s,c) at p(Z|s) with c ignored
};

// (s, a, r, done, s') flattened for the context encoder.
inline constexpr std::size_t kTupleDim = 2 * kStateDim + kActionDim + 2;

// One K-step skill execution.
struct SkillTransition {
  State s{};
  std::vector<double> z;
  double reward = 0.0;  // r_K, summed over the executed steps
  State s_next{};
  bool done = false;    // episode ended in success
  int episode = 0;
  std::vector<State> states;    // replayed low-level window
  std::vector<Action> actions;
};

// Per-task FIFO buffers of env transitions and skill transitions; the oldest
// entry is evicted at capacity.
class TaskBuffer {
 public:
  explicit TaskBuffer(std::size_t capacity = 20000) : capacity_(capacity) {}

  void add(const Transition& t);
  void add(SkillTransition t);

  std::size_t env_size() const { return env_.size(); }
  std::size_t skill_size() const { return skill_.size(); }
  std::size_t capacity() const { return capacity_; }
  // Index 0 is the oldest entry.
  const Transition& env(std::size_t i) const { return env_[i]; }
  const SkillTransition& skill(std::size_t i) const { return skill_[i]; }
  // Indices of skill transitions with a full K-step window.
  std::vector<std::size_t> full_windows(int horizon) const;

  // [n, kTupleDim] rows for env transitions begin..begin+n.
  Tensor tuples(std::size_t begin, std::size_t n) const;
  Tensor all_tuples() const { return tuples(0, env_.size()); }

 private:
  std::size_t capacity_;
  std::deque<Transition> env_;
  std::deque<SkillTransition> skill_;
};

void write_tuple(const Transition& t, double* row);

// Context policy, high-level skill policy, twin critics with targets, both
// codebooks and both decoders. The skill prior and the low-level policy come
// from pre-training and stay frozen.
class MetaModels {
 public:
  MetaModels() = default;
  MetaModels(const MetaConfig& meta, const GqvaeConfig& gq, const SkillModels& skills, Rng& init);

  std::size_t context_dim() const { return context_dim_; }
  std::size_t skill_dim() const { return skill_dim_; }
  int horizon() const { return horizon_; }
  CodebookMode mode() const { return cb_context_.mode(); }

  // tuples: [G*n, kTupleDim], pooled per consecutive group of n rows.
  GaussianBatch context(Tape& tape, Var tuples, std::size_t n, bool trainable = true);
  // Pools every row of `tuples` into one distribution.
  DiagGaussian context_value(const Tensor& tuples) const;
  // states_and_contexts: [B, S + d_c]
  GaussianBatch high(Tape& tape, Var states_and_contexts, bool trainable = true);
  DiagGaussian high_value(const State& s, std::span<const double> c) const;
  // [B, S + d_c + d_z] -> [B, 1]
  Var critic(Tape& tape, int which, Var input, bool trainable = true);
  Tensor target_critic(int which, const Tensor& input) const;
  Var decode_context(Tape& tape, Var code_embed, bool trainable = true);
  Var decode_skill(Tape& tape, Var code_embed, bool trainable = true);
  void polyak(double tau);

  Codebook& cb_context() { return cb_context_; }
  Codebook& cb_skill() { return cb_skill_; }
  const Codebook& cb_context() const { return cb_context_; }
  const Codebook& cb_skill() const { return cb_skill_; }

  // Context encoder, CB_C and the context decoder.
  std::vector<Parameter*> context_parameters();
  // High-level policy, CB_Z and the skill decoder.
  std::vector<Parameter*> skill_parameters();
  std::vector<Parameter*> critic_parameters();
  std::vector<const Parameter*> context_parameters_const() const;
  std::vector<const Parameter*> all_parameters() const;

  void save_to(Checkpoint& ck) const;
  void load_from(const Checkpoint& ck);

 private:
  std::size_t context_dim_ = 8;
  std::size_t skill_dim_ = 8;
  int horizon_ = 10;
  int n_c_ = 20;
  Mlp tuple_net_;
  Mlp context_head_;
  Mlp context_decoder_;
  Mlp high_;
  Mlp skill_decoder_;
  Mlp critic_[2];
  Mlp target_[2];
  Codebook cb_context_;
  Codebook cb_skill_;
};

// Quantized value of one encoder output (tape-free). In vector mode the
// result carries the code vector as mean and the encoder's log_std.
DiagGaussian quantize_value(const Codebook& cb, const DiagGaussian& encoder, bool downstream_encoder = false);
// Sample (or mean when deterministic / point-valued) of a quantized output.
std::vector<double> draw_value(const DiagGaussian& q, CodebookMode mode, Rng& rng, bool deterministic);

struct TripletSample {
  Tensor anchor;    // [n_c, kTupleDim]
  Tensor positive;  // [n_c, kTupleDim]
  std::optional<Tensor> negative;
  std::size_t mini_begin = 0;
  std::size_t anchor_offset = 0;    // within the mini dataset
  std::size_t positive_offset = 0;  // within the mini dataset
  std::size_t negative_task = 0;
};

// Anchor and positive: two distinct contiguous n_c windows of one contiguous
// n_mini segment of `buffers[current]`. Negative: an n_c window of a uniformly
// drawn other task holding at least n_c transitions. Nullopt when the current
// task holds fewer than n_mini transitions.
std::optional<TripletSample> sample_contrastive_batch(std::span<const TaskBuffer* const> buffers, std::size_t current,
                                                      int n_mini, int n_c, Rng& rng);

// max(0, cos(a, n) - cos(a, p) + margin) summed over rows.
Var triplet_loss(const GaussianBatch& anchor, const GaussianBatch& positive, const GaussianBatch& negative,
                 double margin);

struct ContextLosses {
  double bc = 0.0;
  double gq = 0.0;
  double triplet = 0.0;
  double total = 0.0;
  int tasks = 0;       // tasks that contributed
  int triplets = 0;    // tasks that had a negative
  bool skipped = false;
};

struct SkillLosses {
  double bc = 0.0;
  double gq = 0.0;
  double actor = 0.0;
  double critic = 0.0;
  double kl = 0.0;
  double beta = 0.0;
  bool skipped = false;
};

// One task's slice of a skill update.
struct SkillTask {
  const TaskBuffer* buffer = nullptr;
  std::vector<double> c;
};

// Replayed K-step windows, stacked for L_BC and the skill reconstruction
// target.
struct WindowBatch {
  Tensor s0;       // [W, S]
  Tensor states;   // [W*K, S]
  Tensor actions;  // [W*K, A]
  Tensor flat;     // [W, K*(S+A)]
  std::vector<std::size_t> owner;  // owning task row
};

// Everything random in one context update, drawn up front.
struct ContextBatch {
  std::size_t tasks = 0;
  Tensor anchors;  // [T*n_c, kTupleDim]
  Tensor flat;     // [T, n_c*kTupleDim]
  std::vector<std::size_t> with_negative;
  Tensor positives;  // [P*n_c, kTupleDim]
  Tensor negatives;
  WindowBatch windows;
  Tensor c_noise;  // [T, d_c]
  Tensor z_noise;  // [W, d_z]
};

struct ContextTerms {
  Var bc;
  Var gq;
  Var triplet;
  Var total;  // bc + lambda * gq + w_triplet * triplet
  Tensor encoder_embed;
};

// Everything random in one skill update; critic targets are precomputed.
struct SkillBatch {
  Tensor s;       // [B, S]
  Tensor sc;      // [B, S + d_c]
  Tensor in_old;  // [B, S + d_c + d_z], stored z
  Tensor y;       // [B, 1]
  Tensor z_noise;
  WindowBatch windows;
  Tensor window_sc;  // [W, S + d_c]
  Tensor window_noise;
};

struct SkillTerms {
  Var bc;
  Var gq;
  Var actor;   // mean(beta * KL(pi || prior) - min Q)
  Var critic;  // sum of both critics' MSE
  Var kl;
  Var policy;  // bc + gamma_skill * gq + actor
  Tensor encoder_embed;
  Tensor window_embed;
};

// Gradient updates of meta-training and fine-tuning. The context optimizer
// covers context encoder, CB_C and context decoder; the skill optimizer the
// high-level policy, CB_Z and skill decoder; the critic optimizer both critics.
class MetaLearner {
 public:
  MetaLearner(MetaModels& models, SkillModels& skills, const MetaConfig& meta, const GqvaeConfig& gq);

  // Averaged over the tasks in `batch`; `buffers` supplies negatives.
  ContextLosses context_update(std::span<const TaskBuffer* const> buffers, std::span<const std::size_t> batch,
                               Rng& rng);
  SkillLosses skill_update(std::span<const SkillTask> tasks, Rng& rng);

  // Nullopt when no task in `batch` holds n_mini transitions.
  std::optional<ContextBatch> sample_context_batch(std::span<const TaskBuffer* const> buffers,
                                                   std::span<const std::size_t> batch, Rng& rng);
  // Seeds CB_C from the anchors first when `seed` is given and CB_C is empty.
  ContextTerms context_loss(Tape& tape, const ContextBatch& batch, Rng* seed = nullptr);
  // Nullopt when no task has a skill transition.
  std::optional<SkillBatch> sample_skill_batch(std::span<const SkillTask> tasks, Rng& rng);
  SkillTerms skill_loss(Tape& tape, const SkillBatch& batch, Rng* seed = nullptr);

  // Context sample for an update or an episode: the quantized context of a
  // random n_c window, or N(0, I) below n_c transitions.
  std::vector<double> sample_context(const TaskBuffer& buffer, Rng& rng, bool deterministic = false) const;

  double beta() const { return beta_; }
  void set_beta(double b) { beta_ = b; }
  const Adam& skill_optimizer() const { return skill_opt_; }
  const Adam& critic_optimizer() const { return critic_opt_; }
  const Adam& context_optimizer() const { return context_opt_; }
  std::uint64_t context_updates() const { return context_maint_.updates(); }

 private:
  MetaModels* models_;
  SkillModels* skills_;
  MetaConfig meta_;
  GqvaeConfig gq_;
  double beta_;
  Adam context_opt_;
  Adam skill_opt_;
  Adam critic_opt_;
  CodebookMaintenance context_maint_;
  CodebookMaintenance skill_maint_;
};

// Critic bootstrap target r + discount * (1 - done) * next_value.
double critic_target(double reward, bool done, double discount, double next_value);

// Dual step on log(beta) toward the KL target, clamped to [1e-4, 1e2].
double dual_step(double beta, double measured_kl, double target_kl, double lr);

struct EpisodeStats {
  double ret = 0.0;
  bool success = false;
  int steps = 0;
  int skills = 0;
};

// Runs one episode: the high-level policy picks a quantized skill, the frozen
// low-level policy executes it for K steps. Skill and env transitions go to
// `buffer` when given. deterministic uses means at both levels.
EpisodeStats collect_episode(MazeEnv& env, const MetaModels& models, const SkillModels& skills,
                             std::span<const double> c, bool downstream_encoder, bool deterministic, Rng& rng,
                             TaskBuffer* buffer, int episode);

struct MetricsRow {
  int iter = 0;
  int task_id = 0;
  double ret = 0.0;
  bool success = false;
  double l_bc = 0.0;
  double l_gq_context = 0.0;
  double l_gq_skill = 0.0;
  double l_triplet = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double beta = 0.0;
  double cb_context_entropy = 0.0;
  double cb_skill_entropy = 0.0;
};

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const MetricsRow& row);

struct MetaRunOptions {
  std::ostream* metrics = nullptr;  // CSV rows are streamed here when set
  std::function<void(const std::string&)> log;
};

struct MetaRunResult {
  std::vector<MetricsRow> rows;
  double beta = 0.0;
  int skipped_updates = 0;
};

// Round-robin over the training tasks: one episode per iteration, then
// updates_per_iter context and skill updates on a batch of N tasks once
// every task has warmup_episodes episodes. One metrics row per iteration.
MetaRunResult meta_train_run(const Maze& maze, std::span<const Task> tasks, const EnvParams& env,
                             SkillModels& skills, MetaModels& models, const MetaConfig& meta,
                             const GqvaeConfig& gq, std::uint64_t seed, const MetaRunOptions& options = {});

}  // namespace dcmrl
