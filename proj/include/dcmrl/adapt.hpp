#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "dcmrl/meta.hpp"

namespace dcmrl {

struct AdaptConfig {
  int n_cond = 20;
  int budget = 50;
  int updates_per_episode = 10;
  int final_window = 10;  // evaluation episodes averaged for the final rate
};

struct Conditioning {
  std::vector<double> c;  // c*
  DiagGaussian context;   // quantized C* (unit Gaussian when no data)
  bool from_prior = false;
  std::size_t transitions = 0;
  std::vector<EpisodeStats> episodes;
};

// Runs n_cond episodes on `task` with frozen context policy and skill
// policies; early episodes draw c from N(0, I) until n_c transitions exist,
// later ones encode a window of the accumulated data. C* is the quantized
// context of the whole accumulated buffer.
Conditioning condition(const Maze& maze, const Task& task, const EnvParams& env, const MetaModels& models,
                       const SkillModels& skills, const MetaConfig& meta, const GqvaeConfig& gq, int n_cond,
                       Rng& rng);

struct AdaptEpisode {
  int episode = 0;
  double ret = 0.0;      // deterministic evaluation episode
  bool success = false;
  double train_return = 0.0;
  bool train_success = false;
};

struct AdaptationReport {
  std::string label;
  int task_id = 0;
  std::vector<AdaptEpisode> episodes;
  bool zero_shot_success = false;
  double zero_shot_return = 0.0;
  int episodes_to_first_success = -1;  // 1-based; -1 when never
  double final_success_rate = 0.0;

  // Success rate over the evaluation episodes [first, last), 0-based.
  double success_rate(int first, int last) const;
};

// Fine-tunes the high-level policy, CB_Z, the skill decoder and the critics
// on `task` with c fixed to c*. Each budget episode is one sampled training
// episode, updates_per_episode skill updates, and one deterministic
// evaluation episode. `models` is modified in place.
AdaptationReport fine_tune(const Maze& maze, const Task& task, const EnvParams& env, MetaModels& models,
                           SkillModels& skills, const MetaConfig& meta, const GqvaeConfig& gq,
                           const AdaptConfig& adapt, std::span<const double> c, double beta, std::uint64_t seed);

// Same schedule with a freshly initialized skill policy, critics and CB_Z,
// no meta-training and c drawn from N(0, I).
AdaptationReport baseline_scratch(const Maze& maze, const Task& task, const EnvParams& env, SkillModels& skills,
                                  const MetaConfig& meta, const GqvaeConfig& gq, const AdaptConfig& adapt,
                                  std::uint64_t seed);

// Deterministic evaluation without updates.
EpisodeStats evaluate(const Maze& maze, const Task& task, const EnvParams& env, const MetaModels& models,
                      const SkillModels& skills, std::span<const double> c, const GqvaeConfig& gq);

void write_report_csv(std::ostream& out, const AdaptationReport& report);
void write_report_json(std::ostream& out, const AdaptationReport& report);

}  // namespace dcmrl
