#include <cmath>

#include "dcmrl/error.hpp"
#include "dcmrl/meta.hpp"

namespace dcmrl {

namespace {

Tensor noise_tensor(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t(r, c);
  for (double& v : t.data) v = rng.normal();
  return t;
}

bool finite_grads(const std::vector<Parameter*>& ps) {
  for (const Parameter* p : ps) {
    for (double g : p->value.grad) {
      if (!std::isfinite(g)) return false;
    }
  }
  return true;
}

void append_windows(WindowBatch& wb, const TaskBuffer& buf, std::size_t owner, int count, int horizon, Rng& rng) {
  const std::vector<std::size_t> full = buf.full_windows(horizon);
  if (full.empty()) return;
  const std::size_t k = std::size_t(horizon);
  for (int w = 0; w < count; ++w) {
    const SkillTransition& st = buf.skill(full[rng.index(full.size())]);
    const std::size_t row = wb.owner.size();
    wb.owner.push_back(owner);
    wb.s0.data.insert(wb.s0.data.end(), st.states[0].begin(), st.states[0].end());
    wb.s0.shape[0] = row + 1;
    for (std::size_t t = 0; t < k; ++t) {
      wb.states.data.insert(wb.states.data.end(), st.states[t].begin(), st.states[t].end());
      wb.actions.data.insert(wb.actions.data.end(), st.actions[t].begin(), st.actions[t].end());
      wb.flat.data.insert(wb.flat.data.end(), st.states[t].begin(), st.states[t].end());
      wb.flat.data.insert(wb.flat.data.end(), st.actions[t].begin(), st.actions[t].end());
    }
    wb.states.shape[0] = (row + 1) * k;
    wb.actions.shape[0] = (row + 1) * k;
    wb.flat.shape[0] = row + 1;
  }
}

WindowBatch empty_windows(int horizon) {
  WindowBatch wb;
  wb.s0 = Tensor(0, kStateDim);
  wb.states = Tensor(0, kStateDim);
  wb.actions = Tensor(0, kActionDim);
  wb.flat = Tensor(0, std::size_t(horizon) * (kStateDim + kActionDim));
  return wb;
}

Tensor hstack(const Tensor& a, const Tensor& b) {
  Tensor out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy(a.row_ptr(r), a.row_ptr(r) + a.cols(), out.row_ptr(r));
    std::copy(b.row_ptr(r), b.row_ptr(r) + b.cols(), out.row_ptr(r) + a.cols());
  }
  return out;
}

Tensor rows_of(const std::vector<std::vector<double>>& per_task, const std::vector<std::size_t>& owner, std::size_t d) {
  Tensor out(owner.size(), d);
  for (std::size_t r = 0; r < owner.size(); ++r) std::copy(per_task[owner[r]].begin(), per_task[owner[r]].end(), out.row_ptr(r));
  return out;
}

// -(1/(W*K)) sum log pi_low(a_t | s_t, z) with z broadcast over each window.
Var behavior_cloning(Tape& tape, SkillModels& skills, const WindowBatch& wb, Var z, int horizon) {
  Var in = concat_cols({tape.constant(wb.states), repeat_rows(z, std::size_t(horizon))});
  GaussianBatch pi = skills.low_policy(tape, in, false);
  return scale(sum(log_prob(pi, tape.constant(wb.actions))), -1.0 / double(wb.actions.rows()));
}

void seed_if_needed(Codebook& cb, const GaussianBatch& enc, Rng* rng) {
  if (cb.initialized() || rng == nullptr) return;
  cb.initialize(cb.mode() == CodebookMode::gaussian ? embed(enc).value() : enc.mean.value(), *rng);
}

}  // namespace

MetaLearner::MetaLearner(MetaModels& models, SkillModels& skills, const MetaConfig& meta, const GqvaeConfig& gq)
    : models_(&models),
      skills_(&skills),
      meta_(meta),
      gq_(gq),
      beta_(meta.beta_init),
      context_opt_(models.context_parameters(), AdamConfig{.lr = meta.lr}),
      skill_opt_(models.skill_parameters(), AdamConfig{.lr = meta.lr}),
      critic_opt_(models.critic_parameters(), AdamConfig{.lr = meta.lr}),
      context_maint_(gq.maintenance_interval),
      skill_maint_(gq.maintenance_interval) {}

std::vector<double> MetaLearner::sample_context(const TaskBuffer& buffer, Rng& rng, bool deterministic) const {
  const std::size_t n = std::size_t(meta_.n_c);
  if (buffer.env_size() < n) return rng.normal_vector(models_->context_dim());
  const std::size_t begin = rng.index(buffer.env_size() - n + 1);
  const DiagGaussian enc = models_->context_value(buffer.tuples(begin, n));
  const DiagGaussian q = quantize_value(models_->cb_context(), enc, gq_.downstream_encoder);
  return draw_value(q, models_->mode(), rng, deterministic);
}

std::optional<ContextBatch> MetaLearner::sample_context_batch(std::span<const TaskBuffer* const> buffers,
                                                              std::span<const std::size_t> batch, Rng& rng) {
  const std::size_t n_c = std::size_t(meta_.n_c);
  std::vector<TripletSample> samples;
  std::vector<std::size_t> tasks;
  for (std::size_t task : batch) {
    auto s = sample_contrastive_batch(buffers, task, meta_.n_mini, meta_.n_c, rng);
    if (!s) continue;
    samples.push_back(std::move(*s));
    tasks.push_back(task);
  }
  if (samples.empty()) return std::nullopt;
  ContextBatch b;
  b.tasks = samples.size();
  b.anchors = Tensor(b.tasks * n_c, kTupleDim);
  b.flat = Tensor(b.tasks, n_c * kTupleDim);
  for (std::size_t i = 0; i < b.tasks; ++i) {
    std::copy(samples[i].anchor.data.begin(), samples[i].anchor.data.end(), b.anchors.row_ptr(i * n_c));
    std::copy(samples[i].anchor.data.begin(), samples[i].anchor.data.end(), b.flat.row_ptr(i));
    if (samples[i].negative) b.with_negative.push_back(i);
  }
  b.positives = Tensor(b.with_negative.size() * n_c, kTupleDim);
  b.negatives = Tensor(b.with_negative.size() * n_c, kTupleDim);
  for (std::size_t j = 0; j < b.with_negative.size(); ++j) {
    const TripletSample& s = samples[b.with_negative[j]];
    std::copy(s.positive.data.begin(), s.positive.data.end(), b.positives.row_ptr(j * n_c));
    std::copy(s.negative->data.begin(), s.negative->data.end(), b.negatives.row_ptr(j * n_c));
  }
  b.windows = empty_windows(models_->horizon());
  for (std::size_t i = 0; i < b.tasks; ++i) {
    append_windows(b.windows, *buffers[tasks[i]], i, meta_.bc_windows, models_->horizon(), rng);
  }
  b.c_noise = noise_tensor(b.tasks, models_->context_dim(), rng);
  b.z_noise = noise_tensor(b.windows.owner.size(), models_->skill_dim(), rng);
  return b;
}

ContextTerms MetaLearner::context_loss(Tape& tape, const ContextBatch& b, Rng* seed) {
  const std::size_t n_c = std::size_t(meta_.n_c);
  const double inv_t = 1.0 / double(b.tasks);
  Codebook& cb = models_->cb_context();
  GaussianBatch ca = models_->context(tape, tape.constant(b.anchors), n_c);
  seed_if_needed(cb, ca, seed);
  const Quantized qa = quantize(tape, cb, ca, true, gq_.downstream_encoder || !cb.initialized());
  Var recon = models_->decode_context(tape, stop_gradient(qa.code_embed));
  const GqTerms gq = gq_loss(qa.encoder_embed, qa.code_embed, tape.constant(b.flat), recon, gq_.eta, gq_.norm);

  ContextTerms out;
  out.gq = scale(gq.total, inv_t);
  out.triplet = tape.constant(Tensor::scalar(0.0));
  if (!b.with_negative.empty()) {
    GaussianBatch anchor{gather_rows(ca.mean, b.with_negative), gather_rows(ca.log_std, b.with_negative)};
    GaussianBatch cp = models_->context(tape, tape.constant(b.positives), n_c);
    GaussianBatch cn = models_->context(tape, tape.constant(b.negatives), n_c);
    out.triplet = scale(triplet_loss(anchor, cp, cn, meta_.margin), inv_t);
  }

  // L_BC: c drawn from the quantized anchor context, z from the (fixed)
  // high-level policy and CB_Z, actions scored by the frozen low-level policy.
  out.bc = tape.constant(Tensor::scalar(0.0));
  if (!b.windows.owner.empty()) {
    Var c_rows = gather_rows(draw(qa, b.c_noise), b.windows.owner);
    GaussianBatch hz = models_->high(tape, concat_cols({tape.constant(b.windows.s0), c_rows}), false);
    Codebook& cz = models_->cb_skill();
    const Quantized qz = quantize(tape, cz, hz, false, gq_.downstream_encoder || !cz.initialized(), false);
    Var z = draw(qz, b.z_noise);
    out.bc = behavior_cloning(tape, *skills_, b.windows, z, models_->horizon());
  }
  out.total = add(add(out.bc, scale(out.gq, meta_.lambda)), scale(out.triplet, meta_.w_triplet));
  out.encoder_embed = qa.encoder_embed.value();
  return out;
}

ContextLosses MetaLearner::context_update(std::span<const TaskBuffer* const> buffers,
                                          std::span<const std::size_t> batch, Rng& rng) {
  ContextLosses out;
  const std::optional<ContextBatch> b = sample_context_batch(buffers, batch, rng);
  if (!b) {
    out.skipped = true;
    return out;
  }
  context_opt_.zero_grad();
  Tape tape;
  const ContextTerms terms = context_loss(tape, *b, &rng);
  out.bc = terms.bc.value().item();
  out.gq = terms.gq.value().item();
  out.triplet = terms.triplet.value().item();
  out.total = terms.total.value().item();
  out.tasks = int(b->tasks);
  out.triplets = int(b->with_negative.size());
  if (!std::isfinite(out.total)) {
    out.skipped = true;
    return out;
  }
  tape.backward(terms.total);
  if (!finite_grads(context_opt_.params())) {
    context_opt_.zero_grad();
    out.skipped = true;
    return out;
  }
  context_opt_.step();
  Codebook& cb = models_->cb_context();
  cb.project();
  context_maint_.remember(terms.encoder_embed);
  context_maint_.tick(cb, rng);
  return out;
}

std::optional<SkillBatch> MetaLearner::sample_skill_batch(std::span<const SkillTask> tasks, Rng& rng) {
  std::vector<const SkillTask*> used;
  for (const SkillTask& t : tasks) {
    if (t.buffer && t.buffer->skill_size() > 0) used.push_back(&t);
  }
  if (used.empty()) return std::nullopt;
  const std::size_t dz = models_->skill_dim(), dc = models_->context_dim();
  const std::size_t per = std::size_t(meta_.skill_batch), rows = used.size() * per;
  Tensor s(rows, kStateDim), s_next(rows, kStateDim), z_old(rows, dz), c(rows, dc);
  std::vector<double> reward(rows), done(rows);
  std::vector<std::vector<double>> per_task_c;
  for (std::size_t i = 0; i < used.size(); ++i) {
    const TaskBuffer& buf = *used[i]->buffer;
    if (used[i]->c.size() != dc) fail(ErrorKind::invalid_argument, "skill_update: context dimension mismatch");
    per_task_c.push_back(used[i]->c);
    for (std::size_t j = 0; j < per; ++j) {
      const std::size_t r = i * per + j;
      const SkillTransition& st = buf.skill(rng.index(buf.skill_size()));
      std::copy(st.s.begin(), st.s.end(), s.row_ptr(r));
      std::copy(st.s_next.begin(), st.s_next.end(), s_next.row_ptr(r));
      std::copy(st.z.begin(), st.z.end(), z_old.row_ptr(r));
      std::copy(used[i]->c.begin(), used[i]->c.end(), c.row_ptr(r));
      reward[r] = st.reward;
      done[r] = st.done ? 1.0 : 0.0;
    }
  }
  const Codebook& cb = models_->cb_skill();

  // Bootstrap targets from the target critics and the current policy.
  SkillBatch b;
  b.y = Tensor(rows, 1);
  {
    Tape nt;
    const Tensor sc_next = hstack(s_next, c);
    GaussianBatch hn = models_->high(nt, nt.constant(sc_next), false);
    GaussianBatch pn = skills_->prior(nt, nt.constant(s_next), false);
    Tensor zn(rows, dz);
    std::vector<double> kl_next(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const DiagGaussian raw = hn.row(r);
      const DiagGaussian q = quantize_value(cb, raw, gq_.downstream_encoder);
      const std::vector<double> z = draw_value(q, models_->mode(), rng, false);
      std::copy(z.begin(), z.end(), zn.row_ptr(r));
      kl_next[r] = kl(raw, pn.row(r));
    }
    const Tensor in_next = hstack(sc_next, zn);
    const Tensor q1 = models_->target_critic(0, in_next), q2 = models_->target_critic(1, in_next);
    for (std::size_t r = 0; r < rows; ++r) {
      const double v = std::min(q1.data[r], q2.data[r]) - beta_ * kl_next[r];
      b.y.data[r] = critic_target(reward[r], done[r] != 0.0, meta_.discount, v);
    }
  }
  b.s = s;
  b.sc = hstack(s, c);
  b.in_old = hstack(b.sc, z_old);
  b.z_noise = noise_tensor(rows, dz, rng);
  b.windows = empty_windows(models_->horizon());
  for (std::size_t i = 0; i < used.size(); ++i) {
    append_windows(b.windows, *used[i]->buffer, i, meta_.bc_windows, models_->horizon(), rng);
  }
  b.window_sc = hstack(b.windows.s0, rows_of(per_task_c, b.windows.owner, dc));
  b.window_noise = noise_tensor(b.windows.owner.size(), dz, rng);
  return b;
}

SkillTerms MetaLearner::skill_loss(Tape& tape, const SkillBatch& b, Rng* seed) {
  SkillTerms out;
  Var yv = tape.constant(b.y);
  Var in_old = tape.constant(b.in_old);
  out.critic = add(mean(square(sub(models_->critic(tape, 0, in_old), yv))),
                   mean(square(sub(models_->critic(tape, 1, in_old), yv))));

  Codebook& cb = models_->cb_skill();
  GaussianBatch hz = models_->high(tape, tape.constant(b.sc));
  seed_if_needed(cb, hz, seed);
  const bool pass = gq_.downstream_encoder || !cb.initialized();
  const Quantized qz = quantize(tape, cb, hz, true, pass);
  Var z_new = draw(qz, b.z_noise);
  Var in_new = concat_cols({tape.constant(b.sc), z_new});
  Var q_min = minimum(models_->critic(tape, 0, in_new, false), models_->critic(tape, 1, in_new, false));
  GaussianBatch prior = skills_->prior(tape, tape.constant(b.s), false);
  // KL of the policy's own output; z itself comes from the matched code.
  Var kl_rows = kl(hz, prior);
  out.kl = mean(kl_rows);
  out.actor = mean(sub(scale(kl_rows, beta_), q_min));
  out.encoder_embed = qz.encoder_embed.value();

  out.bc = tape.constant(Tensor::scalar(0.0));
  out.gq = tape.constant(Tensor::scalar(0.0));
  out.window_embed = Tensor(0, cb.embed_dim());
  if (!b.windows.owner.empty()) {
    GaussianBatch hw = models_->high(tape, tape.constant(b.window_sc));
    const Quantized qw = quantize(tape, cb, hw, true, pass);
    Var zw = draw(qw, b.window_noise);
    out.bc = behavior_cloning(tape, *skills_, b.windows, zw, models_->horizon());
    Var recon = models_->decode_skill(tape, stop_gradient(qw.code_embed));
    const GqTerms gq = gq_loss(qw.encoder_embed, qw.code_embed, tape.constant(b.windows.flat), recon, gq_.iota, gq_.norm);
    out.gq = scale(gq.total, 1.0 / double(b.windows.owner.size()));
    out.window_embed = qw.encoder_embed.value();
  }
  out.policy = add(add(out.bc, scale(out.gq, meta_.gamma_skill)), out.actor);
  return out;
}

SkillLosses MetaLearner::skill_update(std::span<const SkillTask> tasks, Rng& rng) {
  SkillLosses out;
  out.beta = beta_;
  const std::optional<SkillBatch> b = sample_skill_batch(tasks, rng);
  if (!b) {
    out.skipped = true;
    return out;
  }
  skill_opt_.zero_grad();
  critic_opt_.zero_grad();
  Tape tape;
  const SkillTerms terms = skill_loss(tape, *b, &rng);
  Var total = add(terms.policy, terms.critic);
  out.bc = terms.bc.value().item();
  out.gq = terms.gq.value().item();
  out.actor = terms.actor.value().item();
  out.critic = terms.critic.value().item();
  out.kl = terms.kl.value().item();
  if (!std::isfinite(total.value().item())) {
    out.skipped = true;
    return out;
  }
  tape.backward(total);
  if (!finite_grads(skill_opt_.params()) || !finite_grads(critic_opt_.params())) {
    skill_opt_.zero_grad();
    critic_opt_.zero_grad();
    out.skipped = true;
    return out;
  }
  skill_opt_.step();
  critic_opt_.step();
  Codebook& cb = models_->cb_skill();
  cb.project();
  beta_ = dual_step(beta_, out.kl, meta_.target_kl, meta_.beta_lr);
  out.beta = beta_;
  models_->polyak(meta_.tau);
  skill_maint_.remember(terms.encoder_embed);
  skill_maint_.remember(terms.window_embed);
  skill_maint_.tick(cb, rng);
  return out;
}

}  // namespace dcmrl
