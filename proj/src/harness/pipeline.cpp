#include "dcmrl/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <ostream>
#include <sstream>

#include "dcmrl/checkpoint.hpp"
#include "dcmrl/error.hpp"

namespace dcmrl {

namespace fs = std::filesystem;

namespace {

std::string hex(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

fs::path resolve(const fs::path& root, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : root / path;
}

void say(const Logger& log, const std::string& msg) {
  if (log) log(msg);
}

std::ofstream open_out(const fs::path& path) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "cannot write " + path.string());
  return out;
}

void write_json(const fs::path& path, const nlohmann::ordered_json& j) { open_out(path) << j.dump(2) << '\n'; }

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::precondition, "missing input " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::io, path.string() + ": " + e.what());
  }
}

SkillModels load_skills(const RunConfig& cfg, const OutputLayout& paths) {
  const Checkpoint ck = Checkpoint::load(paths.pretrain_checkpoint(), "pretrain", pretrain_hash(cfg));
  Rng unused(0);
  SkillModels skills(cfg.pretrain, unused);
  skills.load_from(ck);
  return skills;
}

MetaStage load_meta(const RunConfig& cfg, const OutputLayout& paths, const SkillModels& skills) {
  const Checkpoint ck = Checkpoint::load(paths.meta_checkpoint(), "meta", meta_hash(cfg));
  Rng unused(0);
  MetaStage stage{MetaModels(cfg.meta, cfg.gqvae, skills, unused), ck.scalar("beta")};
  stage.models.load_from(ck);
  return stage;
}

std::string task_tag(const AdaptationReport& r) { return r.label + "_task" + std::to_string(r.task_id); }

void write_report(const RunConfig& cfg, const OutputLayout& paths, const AdaptationReport& r) {
  std::ofstream csv = open_out(paths.metrics / (task_tag(r) + ".csv"));
  write_config_header(csv, cfg);
  write_report_csv(csv, r);
  std::ofstream json = open_out(paths.reports / (task_tag(r) + ".json"));
  write_report_json(json, r);
}

void write_conditioning(const RunConfig& cfg, const OutputLayout& paths, const Task& task, const Conditioning& c) {
  std::ofstream csv = open_out(paths.metrics / ("condition_task" + std::to_string(task.id) + ".csv"));
  write_config_header(csv, cfg);
  csv.precision(17);
  csv << "episode,return,success,steps\n";
  for (std::size_t i = 0; i < c.episodes.size(); ++i) {
    const EpisodeStats& e = c.episodes[i];
    csv << i << ',' << e.ret << ',' << (e.success ? 1 : 0) << ',' << e.steps << '\n';
  }
}

nlohmann::ordered_json target_summary(const Task& task, const TargetRun& run) {
  nlohmann::ordered_json j;
  j["task_id"] = task.id;
  j["goal"] = {task.goal[0], task.goal[1]};
  int hits = 0;
  for (const EpisodeStats& e : run.conditioning.episodes) hits += e.success ? 1 : 0;
  j["conditioning_successes"] = hits;
  j["context_from_prior"] = run.conditioning.from_prior;
  j["zero_shot_success"] = run.fine_tune.zero_shot_success;
  j["fine_tune_final_success_rate"] = run.fine_tune.final_success_rate;
  j["fine_tune_episodes_to_first_success"] = run.fine_tune.episodes_to_first_success;
  if (run.baseline) {
    j["baseline_final_success_rate"] = run.baseline->final_success_rate;
    j["baseline_episodes_to_first_success"] = run.baseline->episodes_to_first_success;
  }
  return j;
}

}  // namespace

OutputLayout layout(const RunConfig& cfg, const fs::path& out) {
  OutputLayout l;
  l.root = out;
  l.dataset = cfg.dataset.empty() ? out / "data" / "dataset.dcmd" : resolve(out, cfg.dataset);
  l.dataset_sidecar = l.dataset;
  l.dataset_sidecar += ".json";
  l.checkpoints = resolve(out, cfg.checkpoint_dir);
  l.metrics = resolve(out, cfg.metrics_dir);
  l.reports = out / "reports";
  return l;
}

Maze load_maze(const RunConfig& cfg) {
  if (cfg.maze.empty()) return Maze::desk();
  if (!fs::exists(cfg.maze)) fail(ErrorKind::config, "maze: file not found: " + cfg.maze);
  try {
    return Maze::load(cfg.maze);
  } catch (const Error& e) {
    fail(ErrorKind::config, std::string("maze: ") + e.what());
  }
}

TaskSets task_sets(const RunConfig& cfg, const Maze& maze) {
  return make_task_sets(maze, cfg.n_train, cfg.n_target, cfg.seed, cfg.tasks);
}

void write_config_header(std::ostream& out, const RunConfig& cfg) {
  out << "# config_hash = " << hex(config_hash(cfg)) << '\n';
  std::istringstream in(serialize(cfg));
  for (std::string line; std::getline(in, line);) {
    if (!line.empty()) out << "# " << line << '\n';
  }
}

OfflineDataset make_dataset(const RunConfig& cfg, const Maze& maze) {
  DatasetParams params = cfg.data;
  return generate_dataset(maze, params, cfg.env, cfg.seed);
}

SkillModels pretrain_skills(const RunConfig& cfg, const OfflineDataset& data, std::ostream* metrics) {
  Rng init = Rng::stream(cfg.seed, "init");
  SkillModels skills(cfg.pretrain, init);
  SkillPretrainer trainer(skills, cfg.pretrain);
  Rng rng = Rng::stream(cfg.seed, "pretrain");
  if (metrics) {
    metrics->precision(17);
    *metrics << "step,reconstruction,unit_kl,prior_kl\n";
  }
  std::vector<Window> batch(std::size_t(cfg.pretrain.batch));
  for (int step = 0; step < cfg.pretrain.steps; ++step) {
    for (Window& w : batch) w = sample_window(data, cfg.pretrain.horizon, rng);
    const PretrainLosses l = trainer.step(batch, rng);
    if (metrics) *metrics << step << ',' << l.reconstruction << ',' << l.unit_kl << ',' << l.prior_kl << '\n';
  }
  return skills;
}

MetaStage meta_train_stage(const RunConfig& cfg, const Maze& maze, std::span<const Task> train, SkillModels& skills,
                           std::ostream* metrics, const Logger& log) {
  Rng init = Rng::stream(cfg.seed, "meta_init");
  MetaStage stage{MetaModels(cfg.meta, cfg.gqvae, skills, init), 0.0};
  MetaRunOptions options;
  options.metrics = metrics;
  options.log = log;
  const MetaRunResult r = meta_train_run(maze, train, cfg.env, skills, stage.models, cfg.meta, cfg.gqvae, cfg.seed, options);
  stage.beta = r.beta;
  return stage;
}

TargetRun adapt_target(const RunConfig& cfg, const Maze& maze, const Task& task, SkillModels& skills,
                       const MetaStage& meta, int budget, bool with_baseline) {
  if (budget < 0) fail(ErrorKind::invalid_argument, "adapt: budget must be >= 0");
  TargetRun run;
  MetaModels models = meta.models;
  Rng rng = Rng::stream(cfg.seed, "condition", std::uint64_t(task.id));
  run.conditioning = condition(maze, task, cfg.env, models, skills, cfg.meta, cfg.gqvae, cfg.adapt.n_cond, rng);
  AdaptConfig adapt = cfg.adapt;
  adapt.budget = budget;
  if (budget == 0) {
    const EpisodeStats zero = evaluate(maze, task, cfg.env, models, skills, run.conditioning.c, cfg.gqvae);
    AdaptationReport& r = run.fine_tune;
    r.label = "zero_shot";
    r.task_id = task.id;
    r.zero_shot_success = zero.success;
    r.zero_shot_return = zero.ret;
    r.episodes_to_first_success = zero.success ? 0 : -1;
    r.final_success_rate = zero.success ? 1.0 : 0.0;
    return run;
  }
  run.fine_tune = fine_tune(maze, task, cfg.env, models, skills, cfg.meta, cfg.gqvae, adapt, run.conditioning.c,
                            meta.beta, cfg.seed);
  if (with_baseline) run.baseline = baseline_scratch(maze, task, cfg.env, skills, cfg.meta, cfg.gqvae, adapt, cfg.seed);
  return run;
}

void run_gen_data(const RunConfig& cfg, const fs::path& out, const Logger& log) {
  const OutputLayout paths = layout(cfg, out);
  const OfflineDataset data = make_dataset(cfg, load_maze(cfg));
  fs::create_directories(paths.dataset.parent_path());
  save_dataset(data, paths.dataset);
  std::size_t steps = 0;
  for (const DatasetTrajectory& t : data.trajectories) steps += t.size();
  nlohmann::ordered_json j;
  j["format"] = "DCMD";
  j["dataset_hash"] = hex(dataset_hash(cfg));
  j["config_hash"] = hex(config_hash(cfg));
  j["seed"] = cfg.seed;
  j["trajectories"] = data.trajectories.size();
  j["steps"] = steps;
  j["env"] = serialize_section(cfg, "env");
  write_json(paths.dataset_sidecar, j);
  say(log, "wrote " + paths.dataset.string() + " (" + std::to_string(data.trajectories.size()) + " trajectories)");
}

void run_pretrain(const RunConfig& cfg, const fs::path& out, const Logger& log) {
  const OutputLayout paths = layout(cfg, out);
  if (!fs::exists(paths.dataset)) fail(ErrorKind::precondition, "missing dataset " + paths.dataset.string());
  const nlohmann::json side = read_json(paths.dataset_sidecar);
  if (side.value("dataset_hash", "") != hex(dataset_hash(cfg))) {
    fail(ErrorKind::precondition, "dataset hash mismatch for " + paths.dataset.string() + ": file " +
                                      side.value("dataset_hash", "?") + ", expected " + hex(dataset_hash(cfg)));
  }
  const OfflineDataset data = load_dataset(paths.dataset);
  std::ofstream csv = open_out(paths.metrics / "pretrain.csv");
  write_config_header(csv, cfg);
  const SkillModels skills = pretrain_skills(cfg, data, &csv);
  Checkpoint ck;
  ck.kind = "pretrain";
  ck.config_hash = pretrain_hash(cfg);
  skills.save_to(ck);
  fs::create_directories(paths.checkpoints);
  ck.save(paths.pretrain_checkpoint());
  say(log, "wrote " + paths.pretrain_checkpoint().string());
}

void run_meta_train(const RunConfig& cfg, const fs::path& out, const Logger& log) {
  const OutputLayout paths = layout(cfg, out);
  SkillModels skills = load_skills(cfg, paths);
  const Maze maze = load_maze(cfg);
  const TaskSets sets = task_sets(cfg, maze);
  std::ofstream csv = open_out(paths.metrics / "meta_train.csv");
  write_config_header(csv, cfg);
  const MetaStage stage = meta_train_stage(cfg, maze, sets.train, skills, &csv, log);
  Checkpoint ck;
  ck.kind = "meta";
  ck.config_hash = meta_hash(cfg);
  stage.models.save_to(ck);
  ck.scalars["beta"] = stage.beta;
  fs::create_directories(paths.checkpoints);
  ck.save(paths.meta_checkpoint());
  say(log, "wrote " + paths.meta_checkpoint().string());
}

void run_meta_test(const RunConfig& cfg, const fs::path& out, const Logger& log) {
  const OutputLayout paths = layout(cfg, out);
  SkillModels skills = load_skills(cfg, paths);
  const MetaStage stage = load_meta(cfg, paths, skills);
  const Maze maze = load_maze(cfg);
  const TaskSets sets = task_sets(cfg, maze);
  if (cfg.adapt.budget < 1) fail(ErrorKind::config, "adapt.budget: meta-test needs >= 1 (use eval --budget 0)");
  nlohmann::ordered_json summary;
  summary["config_hash"] = hex(config_hash(cfg));
  summary["budget"] = cfg.adapt.budget;
  summary["targets"] = nlohmann::ordered_json::array();
  double ft = 0.0, base = 0.0;
  for (const Task& task : sets.target) {
    const TargetRun run = adapt_target(cfg, maze, task, skills, stage, cfg.adapt.budget, true);
    write_conditioning(cfg, paths, task, run.conditioning);
    write_report(cfg, paths, run.fine_tune);
    write_report(cfg, paths, *run.baseline);
    summary["targets"].push_back(target_summary(task, run));
    ft += run.fine_tune.final_success_rate;
    base += run.baseline->final_success_rate;
    say(log, "task " + std::to_string(task.id) + ": fine_tune " + std::to_string(run.fine_tune.final_success_rate) +
                 ", baseline " + std::to_string(run.baseline->final_success_rate));
  }
  const double n = double(sets.target.size());
  summary["mean_fine_tune_final_success_rate"] = ft / n;
  summary["mean_baseline_final_success_rate"] = base / n;
  write_json(paths.reports / "meta_test.json", summary);
}

void run_eval(const RunConfig& cfg, const fs::path& out, int budget, const Logger& log) {
  const OutputLayout paths = layout(cfg, out);
  SkillModels skills = load_skills(cfg, paths);
  const MetaStage stage = load_meta(cfg, paths, skills);
  const Maze maze = load_maze(cfg);
  const TaskSets sets = task_sets(cfg, maze);
  nlohmann::ordered_json summary;
  summary["config_hash"] = hex(config_hash(cfg));
  summary["budget"] = budget;
  summary["targets"] = nlohmann::ordered_json::array();
  double total = 0.0;
  for (const Task& task : sets.target) {
    TargetRun run = adapt_target(cfg, maze, task, skills, stage, budget, false);
    if (budget > 0) run.fine_tune.label = "eval";
    write_report(cfg, paths, run.fine_tune);
    summary["targets"].push_back(target_summary(task, run));
    total += run.fine_tune.final_success_rate;
  }
  summary["mean_final_success_rate"] = total / double(sets.target.size());
  write_json(paths.reports / (budget == 0 ? "zero_shot.json" : "eval.json"), summary);
  say(log, "evaluated " + std::to_string(sets.target.size()) + " target tasks");
}

void run_dump_codebook(const RunConfig& cfg, const fs::path& out, const Logger& log) {
  const OutputLayout paths = layout(cfg, out);
  SkillModels skills = load_skills(cfg, paths);
  const MetaStage stage = load_meta(cfg, paths, skills);
  nlohmann::ordered_json j;
  j["config_hash"] = hex(config_hash(cfg));
  j["mode"] = to_string(cfg.gqvae.mode);
  for (const Codebook* cb : {&stage.models.cb_context(), &stage.models.cb_skill()}) {
    std::ofstream csv = open_out(paths.metrics / ("codebook_" + cb->name() + ".csv"));
    write_config_header(csv, cfg);
    cb->write_csv(csv);
    nlohmann::ordered_json codes = nlohmann::ordered_json::array();
    for (std::size_t k = 0; k < cb->size(); ++k) {
      const DiagGaussian g = cb->code(k);
      nlohmann::ordered_json code;
      code["index"] = k;
      code["usage"] = cb->usage()[k];
      code["mean"] = g.mean;
      if (cfg.gqvae.mode == CodebookMode::gaussian) code["log_std"] = g.log_std;
      codes.push_back(code);
    }
    nlohmann::ordered_json entry;
    entry["initialized"] = cb->initialized();
    entry["usage_entropy"] = cb->usage_entropy();
    entry["codes"] = codes;
    j[cb->name()] = entry;
  }
  write_json(paths.reports / "codebook.json", j);
  say(log, "wrote " + (paths.reports / "codebook.json").string());
}

}  // namespace dcmrl
