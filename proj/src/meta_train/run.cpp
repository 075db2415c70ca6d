#include <numeric>
#include <ostream>

#include "dcmrl/error.hpp"
#include "dcmrl/meta.hpp"

namespace dcmrl {

void write_metrics_header(std::ostream& out) {
  out << "iter,task_id,return,success,l_bc,l_gq_context,l_gq_skill,l_triplet,actor_loss,critic_loss,beta,"
         "cb_context_entropy,cb_skill_entropy\n";
}

void write_metrics_row(std::ostream& out, const MetricsRow& r) {
  const auto old = out.precision(17);
  out << r.iter << ',' << r.task_id << ',' << r.ret << ',' << (r.success ? 1 : 0) << ',' << r.l_bc << ','
      << r.l_gq_context << ',' << r.l_gq_skill << ',' << r.l_triplet << ',' << r.actor_loss << ',' << r.critic_loss
      << ',' << r.beta << ',' << r.cb_context_entropy << ',' << r.cb_skill_entropy << '\n';
  out.precision(old);
}

MetaRunResult meta_train_run(const Maze& maze, std::span<const Task> tasks, const EnvParams& env,
                             SkillModels& skills, MetaModels& models, const MetaConfig& meta,
                             const GqvaeConfig& gq, std::uint64_t seed, const MetaRunOptions& options) {
  if (tasks.empty()) fail(ErrorKind::invalid_argument, "meta_train_run: no training tasks");
  auto log = [&](const std::string& msg) {
    if (options.log) options.log(msg);
  };
  const std::size_t n_tasks = tasks.size();
  std::vector<TaskBuffer> buffers(n_tasks, TaskBuffer(std::size_t(meta.buffer_capacity)));
  std::vector<const TaskBuffer*> ptrs;
  for (const TaskBuffer& b : buffers) ptrs.push_back(&b);

  MetaLearner learner(models, skills, meta, gq);
  Rng rollout = Rng::stream(seed, "rollout");
  Rng update = Rng::stream(seed, "update");
  MetaRunResult result;
  if (options.metrics) write_metrics_header(*options.metrics);

  const int iterations = meta.episodes_per_task * int(n_tasks);
  const int warmup = meta.warmup_episodes * int(n_tasks);
  const std::size_t batch_size = std::min(n_tasks, std::size_t(std::max(1, meta.task_batch)));
  for (int it = 0; it < iterations; ++it) {
    const std::size_t task = std::size_t(it) % n_tasks;
    MazeEnv e(maze, tasks[task], env);
    const std::vector<double> c = learner.sample_context(buffers[task], rollout);
    const EpisodeStats stats = collect_episode(e, models, skills, c, gq.downstream_encoder, false, rollout,
                                               &buffers[task], it);
    MetricsRow row;
    row.iter = it;
    row.task_id = tasks[task].id;
    row.ret = stats.ret;
    row.success = stats.success;
    if (it >= warmup) {
      for (int u = 0; u < meta.updates_per_iter; ++u) {
        std::vector<std::size_t> order(n_tasks);
        std::iota(order.begin(), order.end(), std::size_t(0));
        std::shuffle(order.begin(), order.end(), update.engine());
        order.resize(batch_size);
        std::sort(order.begin(), order.end());

        const ContextLosses cl = learner.context_update(ptrs, order, update);
        if (cl.skipped) {
          ++result.skipped_updates;
          log("iter " + std::to_string(it) + ": context update skipped");
        } else if (cl.triplets == 0) {
          log("iter " + std::to_string(it) + ": no negative task available, contrastive term skipped");
        }
        std::vector<SkillTask> st;
        for (std::size_t t : order) st.push_back(SkillTask{&buffers[t], learner.sample_context(buffers[t], update)});
        const SkillLosses sl = learner.skill_update(st, update);
        if (sl.skipped) {
          ++result.skipped_updates;
          log("iter " + std::to_string(it) + ": skill update skipped");
        }
        row.l_bc = sl.bc;
        row.l_gq_context = cl.gq;
        row.l_gq_skill = sl.gq;
        row.l_triplet = cl.triplet;
        row.actor_loss = sl.actor;
        row.critic_loss = sl.critic;
      }
    }
    row.beta = learner.beta();
    row.cb_context_entropy = models.cb_context().usage_entropy();
    row.cb_skill_entropy = models.cb_skill().usage_entropy();
    if (options.metrics) write_metrics_row(*options.metrics, row);
    result.rows.push_back(row);
  }
  result.beta = learner.beta();
  return result;
}

}  // namespace dcmrl
