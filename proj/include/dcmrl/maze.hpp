#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "dcmrl/rng.hpp"

namespace dcmrl {

inline constexpr std::size_t kStateDim = 4;   // x, y, vx, vy
inline constexpr std::size_t kActionDim = 2;  // commanded velocity

using State = std::array<double, kStateDim>;
using Action = std::array<double, kActionDim>;

struct Cell {
  int row = 0;
  int col = 0;
  bool operator==(const Cell&) const = default;
};

// Grid maze; cell (row, col) covers x in [col, col+1), y in [row, row+1).
// Row 0 is the top of the maze.
class Maze {
 public:
  Maze() = default;
  Maze(int height, int width, std::vector<bool> walls, Cell start);

  // '#' wall, '.' open, 'S' start, one row per line. Validated.
  static Maze parse(std::string_view text);
  static Maze load(const std::filesystem::path& path);
  // The 6x6 desk maze used by the default configuration.
  static Maze desk();
  // Random valid maze: border walled, interior walls with probability
  // wall_prob, start at the central cell, regenerated until connected.
  static Maze random(int height, int width, double wall_prob, Rng& rng);

  std::string to_text() const;

  int height() const { return height_; }
  int width() const { return width_; }
  Cell start() const { return start_; }
  bool in_bounds(Cell c) const { return c.row >= 0 && c.row < height_ && c.col >= 0 && c.col < width_; }
  bool is_wall(Cell c) const { return !in_bounds(c) || walls_[std::size_t(c.row * width_ + c.col)]; }
  bool is_open(Cell c) const { return !is_wall(c); }
  bool is_wall_at(double x, double y) const;

  std::vector<Cell> open_cells() const;
  // Rows that contain at least one open cell, top to bottom.
  std::vector<int> open_rows() const;

  static std::array<double, 2> center(Cell c) { return {c.col + 0.5, c.row + 0.5}; }
  static Cell cell_of(double x, double y);

  // Throws Error(invalid_argument) unless start is open, the border is walled
  // and every open cell is reachable from start.
  void validate() const;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<bool> walls_;
  Cell start_;
};

struct Task {
  int id = 0;
  std::array<double, 2> goal{};  // center of an open non-start cell
  Cell goal_cell;
};

struct EnvParams {
  double dt = 0.1;
  double goal_radius = 0.5;
  int step_cap = 300;
};

struct StepResult {
  State state{};
  double reward = 0.0;
  bool done = false;
  bool success = false;
};

// Pure dynamics: v' = clamp(action), per-axis collision resolution, sparse
// goal reward. Does not apply the step cap.
StepResult step(const Maze& maze, const State& state, const Action& action, const Task& task,
                const EnvParams& params = {});

State start_state(const Maze& maze);

// Episode wrapper that enforces the step cap and rejects stepping a finished
// episode.
class MazeEnv {
 public:
  MazeEnv(const Maze& maze, Task task, EnvParams params = {});

  const State& reset();
  StepResult step(const Action& action);

  const State& state() const { return state_; }
  bool done() const { return done_; }
  int steps() const { return steps_; }
  const Task& task() const { return task_; }
  const Maze& maze() const { return *maze_; }
  const EnvParams& params() const { return params_; }

 private:
  const Maze* maze_;
  Task task_;
  EnvParams params_;
  State state_{};
  int steps_ = 0;
  bool done_ = false;
};

// Breadth-first shortest path over 4-connected open cells. Returns the cells
// from start to goal inclusive, or an empty list when start == goal.
std::vector<Cell> plan_path(const Maze& maze, Cell start, Cell goal);

enum class Region { any, top, bottom };

struct TaskSetOptions {
  Region train_region = Region::any;
  Region target_region = Region::any;
  double region_fraction = 0.25;
};

struct TaskSets {
  std::vector<Task> train;
  std::vector<Task> target;
};

// Disjoint goal sets drawn without replacement from the open non-start cells.
TaskSets make_task_sets(const Maze& maze, int n_train, int n_target, std::uint64_t seed,
                        const TaskSetOptions& options = {});
bool in_region(const Maze& maze, Cell c, Region region, double fraction);

Region parse_region(std::string_view s);
const char* to_string(Region r);

}  // namespace dcmrl
