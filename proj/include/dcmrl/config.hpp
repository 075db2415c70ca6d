#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "dcmrl/adapt.hpp"
#include "dcmrl/dataset.hpp"
#include "dcmrl/skill.hpp"

namespace dcmrl {

// Every tunable of a run. Sections of the config file: env (simulator,
// offline data and task sets), pretrain, gqvae, meta, adapt; the top level
// holds seed and paths. Relative paths resolve against the output directory,
// except `maze`, which resolves against the working directory.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string maze;             // empty: the built-in desk maze
  std::string dataset;          // empty: <out>/data/dataset.dcmd
  std::string checkpoint_dir = "checkpoints";
  std::string metrics_dir = "metrics";

  EnvParams env;
  DatasetParams data;
  TaskSetOptions tasks;
  int n_train = 8;
  int n_target = 2;

  PretrainConfig pretrain;
  GqvaeConfig gqvae;
  MetaConfig meta;
  AdaptConfig adapt;

  bool operator==(const RunConfig& other) const;
};

// Sectioned `key = value` text. `[section]` headers or dotted keys
// (`meta.n_c = 20`) both work; `#` starts a comment; strings may be quoted.
// Unknown keys, malformed values and constraint violations throw
// Error(config) with "line N: section.key: reason".
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

// Throws Error(config) naming the first violated key. `lines` maps keys to
// source lines for the message.
void validate(const RunConfig& cfg, const std::map<std::string, int>& lines = {});

// Canonical text form: every key, fixed order, doubles with 17 digits.
std::string serialize(const RunConfig& cfg);
// Canonical text of one section ("" for the top level).
std::string serialize_section(const RunConfig& cfg, std::string_view section);

std::uint64_t config_hash(const RunConfig& cfg);

// Hashes guarding stage inputs. Each covers the seed, the maze and the
// sections the stage's outputs depend on.
std::uint64_t dataset_hash(const RunConfig& cfg);   // env
std::uint64_t pretrain_hash(const RunConfig& cfg);  // env, pretrain
std::uint64_t meta_hash(const RunConfig& cfg);      // env, pretrain, gqvae, meta

}  // namespace dcmrl
