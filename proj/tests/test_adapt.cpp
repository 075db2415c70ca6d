#include <doctest.h>

#include <json.hpp>
#include <sstream>

#include "dcmrl/adapt.hpp"
#include "dcmrl/error.hpp"

using namespace dcmrl;

namespace {

struct Setup {
  Maze maze = Maze::desk();
  EnvParams env;
  MetaConfig meta;
  GqvaeConfig gq;
  AdaptConfig adapt;
  Rng init{5};
  SkillModels skills;
  MetaModels models;
  Task task;

  Setup() {
    PretrainConfig pc;
    pc.hidden = 16;
    skills = SkillModels(pc, init);
    meta.hidden = 16;
    meta.skill_batch = 8;
    meta.bc_windows = 2;
    gq.context_codes = 4;
    gq.skill_codes = 4;
    models = MetaModels(meta, gq, skills, init);
    adapt.n_cond = 3;
    adapt.budget = 6;
    adapt.updates_per_episode = 2;
    adapt.final_window = 3;
    task = make_task_sets(maze, 1, 1, 3).target.front();
  }
};

std::vector<const Parameter*> const_params(const std::vector<Parameter*>& ps) {
  return std::vector<const Parameter*>(ps.begin(), ps.end());
}

bool same_episodes(const AdaptationReport& a, const AdaptationReport& b) {
  if (a.episodes.size() != b.episodes.size()) return false;
  for (std::size_t i = 0; i < a.episodes.size(); ++i) {
    const AdaptEpisode &x = a.episodes[i], &y = b.episodes[i];
    if (x.ret != y.ret || x.success != y.success || x.train_return != y.train_return ||
        x.train_success != y.train_success) {
      return false;
    }
  }
  return true;
}

}  // namespace

TEST_CASE("condition: frozen modules, buffer bookkeeping, prior fallback") {
  Setup s;
  const std::uint64_t ctx = checksum(s.models.context_parameters_const());
  const std::uint64_t all = checksum(s.models.all_parameters());
  const std::uint64_t low = checksum(s.skills.all_parameters());
  Rng rng(1);
  const Conditioning c = condition(s.maze, s.task, s.env, s.models, s.skills, s.meta, s.gq, 4, rng);
  CHECK(checksum(s.models.context_parameters_const()) == ctx);
  CHECK(checksum(s.models.all_parameters()) == all);
  CHECK(checksum(s.skills.all_parameters()) == low);
  CHECK_FALSE(c.from_prior);
  REQUIRE(c.episodes.size() == 4);
  std::size_t steps = 0;
  for (const EpisodeStats& e : c.episodes) steps += std::size_t(e.steps);
  CHECK(c.transitions == steps);
  CHECK(c.c.size() == s.models.context_dim());

  Rng a(2), b(2);
  const Conditioning none = condition(s.maze, s.task, s.env, s.models, s.skills, s.meta, s.gq, 0, a);
  CHECK(none.from_prior);
  CHECK(none.transitions == 0);
  CHECK(none.c == b.normal_vector(s.models.context_dim()));
}

TEST_CASE("fine_tune: episode rows, frozen modules, terminal flags") {
  Setup s;
  const std::uint64_t ctx = checksum(s.models.context_parameters_const());
  const std::uint64_t low = checksum(s.skills.all_parameters());
  const std::uint64_t pol = checksum(const_params(s.models.skill_parameters()));
  const std::vector<double> c(8, 0.1);
  const AdaptationReport r = fine_tune(s.maze, s.task, s.env, s.models, s.skills, s.meta, s.gq, s.adapt, c, 0.1, 7);
  CHECK(r.episodes.size() == std::size_t(s.adapt.budget));
  CHECK(checksum(s.models.context_parameters_const()) == ctx);
  CHECK(checksum(s.skills.all_parameters()) == low);
  CHECK(checksum(const_params(s.models.skill_parameters())) != pol);
  for (std::size_t i = 0; i < r.episodes.size(); ++i) {
    const AdaptEpisode& e = r.episodes[i];
    CHECK(e.episode == int(i));
    // Sparse reward: return is 1 exactly on success.
    CHECK(e.ret == (e.success ? 1.0 : 0.0));
    CHECK(e.train_return == (e.train_success ? 1.0 : 0.0));
  }
  CHECK(r.final_success_rate >= 0.0);
  CHECK(r.final_success_rate <= 1.0);
  CHECK(r.final_success_rate == r.success_rate(s.adapt.budget - s.adapt.final_window, s.adapt.budget));

  s.adapt.budget = 50;
  s.adapt.updates_per_episode = 0;
  const AdaptationReport fifty = fine_tune(s.maze, s.task, s.env, s.models, s.skills, s.meta, s.gq, s.adapt, c, 0.1, 7);
  CHECK(fifty.episodes.size() == 50);

  s.adapt.budget = 0;
  CHECK_THROWS_AS(fine_tune(s.maze, s.task, s.env, s.models, s.skills, s.meta, s.gq, s.adapt, c, 0.1, 7), Error);
  s.adapt.budget = -3;
  CHECK_THROWS_AS(baseline_scratch(s.maze, s.task, s.env, s.skills, s.meta, s.gq, s.adapt, 7), Error);
}

TEST_CASE("fine-tuning optimizers exclude context and low-level parameters") {
  Setup s;
  MetaLearner learner(s.models, s.skills, s.meta, s.gq);
  std::vector<const Parameter*> excluded = s.models.context_parameters_const();
  for (const Parameter* p : s.skills.all_parameters()) excluded.push_back(p);
  for (const Adam* opt : {&learner.skill_optimizer(), &learner.critic_optimizer()}) {
    for (const Parameter* p : opt->params()) {
      for (const Parameter* q : excluded) CHECK(p != q);
    }
  }
  std::size_t covered = learner.skill_optimizer().params().size() + learner.critic_optimizer().params().size();
  CHECK(covered == s.models.skill_parameters().size() + s.models.critic_parameters().size());
}

TEST_CASE("zero-shot evaluation performs no updates") {
  Setup s;
  const std::vector<double> c(8, -0.2);
  const std::uint64_t before = checksum(s.models.all_parameters());
  const EpisodeStats a = evaluate(s.maze, s.task, s.env, s.models, s.skills, c, s.gq);
  const EpisodeStats b = evaluate(s.maze, s.task, s.env, s.models, s.skills, c, s.gq);
  CHECK(checksum(s.models.all_parameters()) == before);
  CHECK(a.success == b.success);
  CHECK(a.steps == b.steps);
  CHECK(a.ret == b.ret);
  MetaModels copy = s.models;
  const AdaptationReport r = fine_tune(s.maze, s.task, s.env, copy, s.skills, s.meta, s.gq, s.adapt, c, 0.1, 3);
  CHECK(r.zero_shot_success == a.success);
  CHECK(r.zero_shot_return == a.ret);
}

TEST_CASE("baseline shares the fine-tuning schedule and report schema") {
  Setup s;
  const AdaptationReport base = baseline_scratch(s.maze, s.task, s.env, s.skills, s.meta, s.gq, s.adapt, 11);
  CHECK(base.label == "baseline_scratch");
  CHECK(base.episodes.size() == std::size_t(s.adapt.budget));

  // The same schedule run through fine_tune on equally fresh models.
  MetaConfig scratch = s.meta;
  scratch.init_high_from_prior = false;
  Rng init = Rng::stream(11, "baseline_init");
  MetaModels fresh(scratch, s.gq, s.skills, init);
  Rng ctx = Rng::stream(11, "baseline_context", std::uint64_t(s.task.id));
  const std::vector<double> c = ctx.normal_vector(fresh.context_dim());
  const AdaptationReport ft = fine_tune(s.maze, s.task, s.env, fresh, s.skills, s.meta, s.gq, s.adapt, c,
                                        s.meta.beta_init, 11);
  CHECK(ft.label == "fine_tune");
  CHECK(same_episodes(base, ft));

  std::ostringstream bc, fc, bj, fj;
  write_report_csv(bc, base);
  write_report_csv(fc, ft);
  CHECK(bc.str().rfind("episode,return,success\n", 0) == 0);
  CHECK(bc.str() == fc.str());
  write_report_json(bj, base);
  write_report_json(fj, ft);
  const auto jb = nlohmann::json::parse(bj.str()), jf = nlohmann::json::parse(fj.str());
  std::vector<std::string> kb, kf;
  for (auto it = jb.begin(); it != jb.end(); ++it) kb.push_back(it.key());
  for (auto it = jf.begin(); it != jf.end(); ++it) kf.push_back(it.key());
  CHECK(kb == kf);
  CHECK(jb.contains("episodes_to_first_success"));
  CHECK(jb.contains("final_success_rate"));
  CHECK(jb["episodes"] == s.adapt.budget);
}

TEST_CASE("adaptation report bookkeeping") {
  AdaptationReport r;
  for (int i = 0; i < 10; ++i) {
    AdaptEpisode e;
    e.episode = i;
    e.success = i == 3 || i >= 7;
    r.episodes.push_back(e);
  }
  CHECK(r.success_rate(0, 10) == doctest::Approx(0.4));
  CHECK(r.success_rate(7, 10) == 1.0);
  CHECK(r.success_rate(5, 5) == 0.0);
  CHECK(r.success_rate(-4, 20) == doctest::Approx(0.4));
}

TEST_CASE("fine_tune is deterministic for a fixed seed") {
  Setup s;
  const std::vector<double> c(8, 0.3);
  MetaModels a = s.models, b = s.models;
  const AdaptationReport ra = fine_tune(s.maze, s.task, s.env, a, s.skills, s.meta, s.gq, s.adapt, c, 0.5, 19);
  const AdaptationReport rb = fine_tune(s.maze, s.task, s.env, b, s.skills, s.meta, s.gq, s.adapt, c, 0.5, 19);
  CHECK(same_episodes(ra, rb));
  CHECK(checksum(a.all_parameters()) == checksum(b.all_parameters()));
}
