#include "dcmrl/error.hpp"
#include "dcmrl/meta.hpp"

namespace dcmrl {

EpisodeStats collect_episode(MazeEnv& env, const MetaModels& models, const SkillModels& skills,
                             std::span<const double> c, bool downstream_encoder, bool deterministic, Rng& rng,
                             TaskBuffer* buffer, int episode) {
  if (c.size() != models.context_dim()) fail(ErrorKind::invalid_argument, "collect_episode: context dimension mismatch");
  env.reset();
  EpisodeStats stats;
  while (!env.done()) {
    SkillTransition st;
    st.s = env.state();
    st.episode = episode;
    const DiagGaussian q = quantize_value(models.cb_skill(), models.high_value(st.s, c), downstream_encoder);
    st.z = draw_value(q, models.mode(), rng, deterministic);
    for (int t = 0; t < models.horizon() && !env.done(); ++t) {
      const State s = env.state();
      Action a;
      if (deterministic) {
        a = skills.act(s, st.z);
      } else {
        const DiagGaussian pi = skills.low_value(s, st.z);
        const std::vector<double> sample = sample_reparam(pi, rng.normal_vector(kActionDim));
        a = Action{sample[0], sample[1]};
      }
      const StepResult r = env.step(a);
      const Transition tr{s, a, r.reward, r.done, r.state};
      if (buffer) buffer->add(tr);
      st.states.push_back(s);
      st.actions.push_back(a);
      st.reward += r.reward;
      stats.success = stats.success || r.success;
    }
    st.s_next = env.state();
    st.done = stats.success;
    stats.ret += st.reward;
    ++stats.skills;
    if (buffer) buffer->add(std::move(st));
  }
  stats.steps = env.steps();
  return stats;
}

}  // namespace dcmrl
