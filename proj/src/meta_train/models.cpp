#include <algorithm>
#include <cmath>

#include "dcmrl/error.hpp"
#include "dcmrl/meta.hpp"

namespace dcmrl {

namespace {

DiagGaussian split_row(const Tensor& out, std::size_t row, std::size_t d) {
  DiagGaussian g = DiagGaussian::standard(d);
  for (std::size_t i = 0; i < d; ++i) {
    g.mean[i] = out(row, i);
    g.log_std[i] = std::clamp(out(row, d + i), kLogStdMin, kLogStdMax);
  }
  return g;
}

}  // namespace

MetaModels::MetaModels(const MetaConfig& meta, const GqvaeConfig& gq, const SkillModels& skills, Rng& init)
    : context_dim_(std::size_t(meta.context_dim)),
      skill_dim_(skills.skill_dim()),
      horizon_(skills.horizon()),
      n_c_(meta.n_c) {
  if (meta.context_dim < 1) fail(ErrorKind::config, "meta.context_dim must be >= 1");
  const std::size_t h = std::size_t(meta.hidden);
  tuple_net_ = Mlp("context_tuple", {kTupleDim, h, h}, Activation::tanh, init);
  context_head_ = Mlp("context_head", {h, h, 2 * context_dim_}, Activation::tanh, init);
  high_ = Mlp("high_policy", hidden_dims(kStateDim + context_dim_, meta.hidden, meta.layers, 2 * skill_dim_),
              Activation::tanh, init);
  if (meta.init_high_from_prior) high_.init_from_prefix(skills.prior_network());
  const std::size_t q_in = kStateDim + context_dim_ + skill_dim_;
  for (int i = 0; i < 2; ++i) {
    critic_[i] = Mlp("critic" + std::to_string(i), hidden_dims(q_in, meta.hidden, meta.layers, 1), Activation::tanh, init);
    target_[i] = Mlp("critic_target" + std::to_string(i), critic_[i].dims(), Activation::tanh, init);
    target_[i].polyak_from(critic_[i], 1.0);
  }
  cb_context_ = Codebook("cb_context", std::size_t(gq.context_codes), context_dim_, gq.mode);
  cb_skill_ = Codebook("cb_skill", std::size_t(gq.skill_codes), skill_dim_, gq.mode);
  context_decoder_ = Mlp("context_decoder",
                         hidden_dims(cb_context_.embed_dim(), meta.hidden, meta.layers, std::size_t(meta.n_c) * kTupleDim),
                         Activation::tanh, init);
  skill_decoder_ = Mlp("skill_decoder", hidden_dims(cb_skill_.embed_dim(), meta.hidden, meta.layers, skills.window_dim()),
                       Activation::tanh, init);
}

GaussianBatch MetaModels::context(Tape& tape, Var tuples, std::size_t n, bool trainable) {
  Var features = tuple_net_.forward(tape, tuples, trainable);
  return gaussian_head(context_head_.forward(tape, pool_rows(features, n), trainable), context_dim_);
}

DiagGaussian MetaModels::context_value(const Tensor& tuples) const {
  if (tuples.rows() == 0) fail(ErrorKind::invalid_argument, "context_value: no transitions");
  const Tensor f = tuple_net_.infer(tuples);
  Tensor pooled(1, f.cols());
  for (std::size_t r = 0; r < f.rows(); ++r) {
    for (std::size_t k = 0; k < f.cols(); ++k) pooled.data[k] += f(r, k);
  }
  for (double& v : pooled.data) v /= double(f.rows());
  return split_row(context_head_.infer(pooled), 0, context_dim_);
}

GaussianBatch MetaModels::high(Tape& tape, Var states_and_contexts, bool trainable) {
  return gaussian_head(high_.forward(tape, states_and_contexts, trainable), skill_dim_);
}

DiagGaussian MetaModels::high_value(const State& s, std::span<const double> c) const {
  if (c.size() != context_dim_) fail(ErrorKind::invalid_argument, "high_value: context dimension mismatch");
  Tensor in(1, kStateDim + context_dim_);
  std::copy(s.begin(), s.end(), in.data.begin());
  std::copy(c.begin(), c.end(), in.data.begin() + kStateDim);
  return split_row(high_.infer(in), 0, skill_dim_);
}

Var MetaModels::critic(Tape& tape, int which, Var input, bool trainable) {
  return critic_[which].forward(tape, input, trainable);
}

Tensor MetaModels::target_critic(int which, const Tensor& input) const { return target_[which].infer(input); }

Var MetaModels::decode_context(Tape& tape, Var code_embed, bool trainable) {
  return context_decoder_.forward(tape, code_embed, trainable);
}

Var MetaModels::decode_skill(Tape& tape, Var code_embed, bool trainable) {
  return skill_decoder_.forward(tape, code_embed, trainable);
}

void MetaModels::polyak(double tau) {
  for (int i = 0; i < 2; ++i) target_[i].polyak_from(critic_[i], tau);
}

std::vector<Parameter*> MetaModels::context_parameters() {
  std::vector<Parameter*> ps = tuple_net_.parameters();
  for (Parameter* p : context_head_.parameters()) ps.push_back(p);
  for (Parameter* p : cb_context_.parameters()) ps.push_back(p);
  for (Parameter* p : context_decoder_.parameters()) ps.push_back(p);
  return ps;
}

std::vector<Parameter*> MetaModels::skill_parameters() {
  std::vector<Parameter*> ps = high_.parameters();
  for (Parameter* p : cb_skill_.parameters()) ps.push_back(p);
  for (Parameter* p : skill_decoder_.parameters()) ps.push_back(p);
  return ps;
}

std::vector<Parameter*> MetaModels::critic_parameters() {
  std::vector<Parameter*> ps = critic_[0].parameters();
  for (Parameter* p : critic_[1].parameters()) ps.push_back(p);
  return ps;
}

std::vector<const Parameter*> MetaModels::context_parameters_const() const {
  std::vector<const Parameter*> ps = tuple_net_.parameters();
  for (const Parameter* p : context_head_.parameters()) ps.push_back(p);
  for (const Parameter* p : cb_context_.parameters()) ps.push_back(p);
  for (const Parameter* p : context_decoder_.parameters()) ps.push_back(p);
  return ps;
}

std::vector<const Parameter*> MetaModels::all_parameters() const {
  std::vector<const Parameter*> ps = context_parameters_const();
  for (const Mlp* m : {&high_, &skill_decoder_, &critic_[0], &critic_[1], &target_[0], &target_[1]}) {
    for (const Parameter* p : m->parameters()) ps.push_back(p);
  }
  for (const Parameter* p : cb_skill_.parameters()) ps.push_back(p);
  return ps;
}

void MetaModels::save_to(Checkpoint& ck) const {
  ck.put(all_parameters());
  for (const Codebook* cb : {&cb_context_, &cb_skill_}) {
    Tensor usage(1, cb->size());
    for (std::size_t k = 0; k < cb->size(); ++k) usage.data[k] = double(cb->usage()[k]);
    ck.tensors[cb->name() + ".usage"] = usage;
    ck.scalars[cb->name() + ".initialized"] = cb->initialized() ? 1.0 : 0.0;
  }
}

void MetaModels::load_from(const Checkpoint& ck) {
  std::vector<Parameter*> ps = context_parameters();
  for (Parameter* p : skill_parameters()) ps.push_back(p);
  for (Parameter* p : critic_parameters()) ps.push_back(p);
  for (int i = 0; i < 2; ++i) {
    for (Parameter* p : target_[i].parameters()) ps.push_back(p);
  }
  ck.restore(ps);
  for (Codebook* cb : {&cb_context_, &cb_skill_}) {
    if (ck.scalar(cb->name() + ".initialized") != 0.0) cb->mark_initialized();
    const auto it = ck.tensors.find(cb->name() + ".usage");
    if (it != ck.tensors.end()) cb->set_usage(std::vector<std::uint64_t>(it->second.data.begin(), it->second.data.end()));
  }
}

DiagGaussian quantize_value(const Codebook& cb, const DiagGaussian& encoder, bool downstream_encoder) {
  if (downstream_encoder || !cb.initialized()) return encoder;
  if (cb.mode() == CodebookMode::gaussian) return cb.code(cb.nearest(embed(encoder)).index);
  DiagGaussian out = encoder;
  out.mean = cb.embedding(cb.nearest(encoder.mean).index);
  return out;
}

std::vector<double> draw_value(const DiagGaussian& q, CodebookMode mode, Rng& rng, bool deterministic) {
  if (deterministic || mode == CodebookMode::vector) return q.mean;
  return sample_reparam(q, rng.normal_vector(q.dim()));
}

}  // namespace dcmrl
