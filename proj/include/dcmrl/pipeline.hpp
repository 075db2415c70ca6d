#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>

#include "dcmrl/config.hpp"

namespace dcmrl {

// Where each stage reads and writes under --out.
struct OutputLayout {
  std::filesystem::path root;
  std::filesystem::path dataset;
  std::filesystem::path dataset_sidecar;  // <dataset>.json
  std::filesystem::path checkpoints;
  std::filesystem::path metrics;
  std::filesystem::path reports;

  std::filesystem::path pretrain_checkpoint() const { return checkpoints / "pretrain.ckpt"; }
  std::filesystem::path meta_checkpoint() const { return checkpoints / "meta.ckpt"; }
};

OutputLayout layout(const RunConfig& cfg, const std::filesystem::path& out);

// The configured maze file, or the desk maze. A missing file is a config
// error.
Maze load_maze(const RunConfig& cfg);
TaskSets task_sets(const RunConfig& cfg, const Maze& maze);

// `# key = value` lines of the effective config and its hash.
void write_config_header(std::ostream& out, const RunConfig& cfg);

using Logger = std::function<void(const std::string&)>;

// In-memory stages. Metrics CSV rows go to `metrics` when set.
OfflineDataset make_dataset(const RunConfig& cfg, const Maze& maze);
SkillModels pretrain_skills(const RunConfig& cfg, const OfflineDataset& data, std::ostream* metrics = nullptr);

struct MetaStage {
  MetaModels models;
  double beta = 0.0;
};
MetaStage meta_train_stage(const RunConfig& cfg, const Maze& maze, std::span<const Task> train, SkillModels& skills,
                           std::ostream* metrics = nullptr, const Logger& log = {});

struct TargetRun {
  Conditioning conditioning;
  AdaptationReport fine_tune;
  std::optional<AdaptationReport> baseline;
};
// Conditions a copy of `meta` on `task`, fine-tunes it for `budget`
// episodes and optionally runs the scratch baseline with the same budget.
// Budget 0 gives a zero-shot report with no updates.
TargetRun adapt_target(const RunConfig& cfg, const Maze& maze, const Task& task, SkillModels& skills,
                       const MetaStage& meta, int budget, bool with_baseline);

// File stages behind the CLI subcommands. Each reads its inputs from and
// writes its outputs under `out`; missing or mismatched inputs throw
// Error(precondition).
void run_gen_data(const RunConfig& cfg, const std::filesystem::path& out, const Logger& log = {});
void run_pretrain(const RunConfig& cfg, const std::filesystem::path& out, const Logger& log = {});
void run_meta_train(const RunConfig& cfg, const std::filesystem::path& out, const Logger& log = {});
// Fine-tuning and scratch baseline on every target task, plus a summary.
void run_meta_test(const RunConfig& cfg, const std::filesystem::path& out, const Logger& log = {});
// Fine-tuning only, with the given budget; 0 reports zero-shot performance.
void run_eval(const RunConfig& cfg, const std::filesystem::path& out, int budget, const Logger& log = {});
void run_dump_codebook(const RunConfig& cfg, const std::filesystem::path& out, const Logger& log = {});

}  // namespace dcmrl
