#include <cmath>

#include "dcmrl/error.hpp"
#include "dcmrl/meta.hpp"

namespace dcmrl {

void write_tuple(const Transition& t, double* row) {
  for (double v : t.s) *row++ = v;
  for (double v : t.a) *row++ = v;
  *row++ = t.r;
  *row++ = t.done ? 1.0 : 0.0;
  for (double v : t.s_next) *row++ = v;
}

void TaskBuffer::add(const Transition& t) {
  if (env_.size() == capacity_) env_.pop_front();
  env_.push_back(t);
}

void TaskBuffer::add(SkillTransition t) {
  if (skill_.size() == capacity_) skill_.pop_front();
  skill_.push_back(std::move(t));
}

std::vector<std::size_t> TaskBuffer::full_windows(int horizon) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < skill_.size(); ++i) {
    if (int(skill_[i].actions.size()) == horizon) out.push_back(i);
  }
  return out;
}

Tensor TaskBuffer::tuples(std::size_t begin, std::size_t n) const {
  if (begin + n > env_.size()) {
    fail(ErrorKind::invalid_argument, "task buffer: window [" + std::to_string(begin) + ", " +
                                          std::to_string(begin + n) + ") outside " + std::to_string(env_.size()));
  }
  Tensor out(n, kTupleDim);
  for (std::size_t i = 0; i < n; ++i) write_tuple(env_[begin + i], out.row_ptr(i));
  return out;
}

std::optional<TripletSample> sample_contrastive_batch(std::span<const TaskBuffer* const> buffers, std::size_t current,
                                                      int n_mini, int n_c, Rng& rng) {
  if (n_c < 1 || n_mini < 2 * n_c) {
    fail(ErrorKind::invalid_argument, "contrastive batch: need n_c >= 1 and n_mini >= 2 * n_c");
  }
  const TaskBuffer& cur = *buffers[current];
  if (cur.env_size() < std::size_t(n_mini)) return std::nullopt;
  TripletSample s;
  s.mini_begin = rng.index(cur.env_size() - std::size_t(n_mini) + 1);
  const std::size_t span = std::size_t(n_mini - n_c) + 1;
  s.anchor_offset = rng.index(span);
  do {
    s.positive_offset = rng.index(span);
  } while (s.positive_offset == s.anchor_offset);
  s.anchor = cur.tuples(s.mini_begin + s.anchor_offset, std::size_t(n_c));
  s.positive = cur.tuples(s.mini_begin + s.positive_offset, std::size_t(n_c));

  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < buffers.size(); ++i) {
    if (i != current && buffers[i]->env_size() >= std::size_t(n_c)) others.push_back(i);
  }
  if (!others.empty()) {
    s.negative_task = others[rng.index(others.size())];
    const TaskBuffer& neg = *buffers[s.negative_task];
    const std::size_t off = rng.index(neg.env_size() - std::size_t(n_c) + 1);
    s.negative = neg.tuples(off, std::size_t(n_c));
  }
  return s;
}

Var triplet_loss(const GaussianBatch& anchor, const GaussianBatch& positive, const GaussianBatch& negative,
                 double margin) {
  Var gap = add_scalar(sub(cosine_sim(anchor, negative), cosine_sim(anchor, positive)), margin);
  return sum(relu(gap));
}

double critic_target(double reward, bool done, double discount, double next_value) {
  return done ? reward : reward + discount * next_value;
}

double dual_step(double beta, double measured_kl, double target_kl, double lr) {
  const double next = beta * std::exp(lr * (measured_kl - target_kl));
  return std::clamp(next, 1e-4, 1e2);
}

}  // namespace dcmrl
