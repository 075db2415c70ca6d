#include "dcmrl/adapt.hpp"

#include <json.hpp>
#include <ostream>

#include "dcmrl/error.hpp"

namespace dcmrl {

Conditioning condition(const Maze& maze, const Task& task, const EnvParams& env, const MetaModels& models,
                       const SkillModels& skills, const MetaConfig& meta, const GqvaeConfig& gq, int n_cond,
                       Rng& rng) {
  Conditioning out;
  if (n_cond <= 0) {
    out.from_prior = true;
    out.context = DiagGaussian::standard(models.context_dim());
    out.c = rng.normal_vector(models.context_dim());
    return out;
  }
  TaskBuffer buffer(std::size_t(meta.buffer_capacity));
  const std::size_t n_c = std::size_t(meta.n_c);
  for (int e = 0; e < n_cond; ++e) {
    std::vector<double> c;
    if (buffer.env_size() < n_c) {
      c = rng.normal_vector(models.context_dim());
    } else {
      const std::size_t begin = rng.index(buffer.env_size() - n_c + 1);
      const DiagGaussian q = quantize_value(models.cb_context(), models.context_value(buffer.tuples(begin, n_c)),
                                            gq.downstream_encoder);
      c = draw_value(q, models.mode(), rng, false);
    }
    MazeEnv e_env(maze, task, env);
    out.episodes.push_back(collect_episode(e_env, models, skills, c, gq.downstream_encoder, false, rng, &buffer, e));
  }
  out.transitions = buffer.env_size();
  out.context = quantize_value(models.cb_context(), models.context_value(buffer.all_tuples()), gq.downstream_encoder);
  out.c = draw_value(out.context, models.mode(), rng, false);
  return out;
}

double AdaptationReport::success_rate(int first, int last) const {
  first = std::max(first, 0);
  last = std::min(last, int(episodes.size()));
  if (last <= first) return 0.0;
  int hits = 0;
  for (int i = first; i < last; ++i) hits += episodes[std::size_t(i)].success ? 1 : 0;
  return double(hits) / double(last - first);
}

EpisodeStats evaluate(const Maze& maze, const Task& task, const EnvParams& env, const MetaModels& models,
                      const SkillModels& skills, std::span<const double> c, const GqvaeConfig& gq) {
  MazeEnv e(maze, task, env);
  Rng unused(0);
  return collect_episode(e, models, skills, c, gq.downstream_encoder, true, unused, nullptr, 0);
}

AdaptationReport fine_tune(const Maze& maze, const Task& task, const EnvParams& env, MetaModels& models,
                           SkillModels& skills, const MetaConfig& meta, const GqvaeConfig& gq,
                           const AdaptConfig& adapt, std::span<const double> c, double beta, std::uint64_t seed) {
  if (adapt.budget < 1) fail(ErrorKind::invalid_argument, "fine_tune: budget must be >= 1");
  AdaptationReport report;
  report.label = "fine_tune";
  report.task_id = task.id;
  const EpisodeStats zero = evaluate(maze, task, env, models, skills, c, gq);
  report.zero_shot_success = zero.success;
  report.zero_shot_return = zero.ret;

  MetaLearner learner(models, skills, meta, gq);
  learner.set_beta(beta);
  Rng rollout = Rng::stream(seed, "adapt_rollout", std::uint64_t(task.id));
  Rng update = Rng::stream(seed, "adapt_update", std::uint64_t(task.id));
  TaskBuffer buffer(std::size_t(meta.buffer_capacity));
  const std::vector<double> cv(c.begin(), c.end());
  for (int ep = 0; ep < adapt.budget; ++ep) {
    MazeEnv e(maze, task, env);
    const EpisodeStats train = collect_episode(e, models, skills, cv, gq.downstream_encoder, false, rollout, &buffer, ep);
    for (int u = 0; u < adapt.updates_per_episode; ++u) {
      const SkillTask st{&buffer, cv};
      learner.skill_update(std::span<const SkillTask>(&st, 1), update);
    }
    const EpisodeStats eval = evaluate(maze, task, env, models, skills, cv, gq);
    AdaptEpisode row;
    row.episode = ep;
    row.ret = eval.ret;
    row.success = eval.success;
    row.train_return = train.ret;
    row.train_success = train.success;
    report.episodes.push_back(row);
    if (eval.success && report.episodes_to_first_success < 0) report.episodes_to_first_success = ep + 1;
  }
  report.final_success_rate = report.success_rate(adapt.budget - adapt.final_window, adapt.budget);
  return report;
}

AdaptationReport baseline_scratch(const Maze& maze, const Task& task, const EnvParams& env, SkillModels& skills,
                                  const MetaConfig& meta, const GqvaeConfig& gq, const AdaptConfig& adapt,
                                  std::uint64_t seed) {
  Rng init = Rng::stream(seed, "baseline_init");
  MetaConfig scratch = meta;
  scratch.init_high_from_prior = false;
  MetaModels fresh(scratch, gq, skills, init);
  Rng ctx = Rng::stream(seed, "baseline_context", std::uint64_t(task.id));
  const std::vector<double> c = ctx.normal_vector(fresh.context_dim());
  AdaptationReport report = fine_tune(maze, task, env, fresh, skills, meta, gq, adapt, c, meta.beta_init, seed);
  report.label = "baseline_scratch";
  return report;
}

void write_report_csv(std::ostream& out, const AdaptationReport& report) {
  const auto old = out.precision(17);
  out << "episode,return,success\n";
  for (const AdaptEpisode& e : report.episodes) out << e.episode << ',' << e.ret << ',' << (e.success ? 1 : 0) << '\n';
  out.precision(old);
}

void write_report_json(std::ostream& out, const AdaptationReport& report) {
  nlohmann::ordered_json j;
  j["label"] = report.label;
  j["task_id"] = report.task_id;
  j["episodes"] = report.episodes.size();
  j["zero_shot_success"] = report.zero_shot_success;
  j["episodes_to_first_success"] = report.episodes_to_first_success;
  j["final_success_rate"] = report.final_success_rate;
  out << j.dump(2) << '\n';
}

}  // namespace dcmrl
