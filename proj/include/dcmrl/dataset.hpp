#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dcmrl/maze.hpp"

namespace dcmrl {

// Environment transition with reward and termination.
struct Transition {
  State s{};
  Action a{};
  double r = 0.0;
  bool done = false;
  State s_next{};
};

// Offline trajectory: states and actions only, no reward or task label.
struct DatasetTrajectory {
  std::vector<State> states;
  std::vector<Action> actions;
  std::size_t size() const { return states.size(); }
};

struct OfflineDataset {
  std::uint32_t state_dim = kStateDim;
  std::uint32_t action_dim = kActionDim;
  std::vector<DatasetTrajectory> trajectories;
  bool operator==(const OfflineDataset&) const;
};

struct DatasetParams {
  int n_traj = 400;
  int min_length = 10;  // the skill horizon K
  double controller_gain = 5.0;
  double waypoint_radius = 0.3;
  double action_noise = 0.1;
};

// Planner-driven rollouts between random start/goal cell pairs. Stored values
// are rounded to float so the in-memory dataset equals its file form.
OfflineDataset generate_dataset(const Maze& maze, const DatasetParams& params, const EnvParams& env,
                                std::uint64_t seed);

struct ControllerRollout {
  DatasetTrajectory trajectory;
  bool reached_goal = false;
};

// One waypoint-following run from the centre of `start` toward `goal`.
ControllerRollout run_controller(const Maze& maze, Cell start, Cell goal, const DatasetParams& params,
                                 const EnvParams& env, Rng* noise);

// "DCMD" little-endian binary: magic, version u32 = 1, state_dim, action_dim,
// n_traj, then per trajectory a u32 length and length*(state_dim+action_dim)
// f32 values (state then action per step).
std::vector<std::uint8_t> encode_dataset(const OfflineDataset& data);
OfflineDataset decode_dataset(const std::vector<std::uint8_t>& bytes);
void save_dataset(const OfflineDataset& data, const std::filesystem::path& path);
OfflineDataset load_dataset(const std::filesystem::path& path);

}  // namespace dcmrl
