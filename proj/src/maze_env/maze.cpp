#include "dcmrl/maze.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <sstream>

#include "dcmrl/error.hpp"

namespace dcmrl {

namespace {

constexpr std::array<std::array<int, 2>, 4> kNeighbours{{{-1, 0}, {1, 0}, {0, -1}, {0, 1}}};

std::vector<int> bfs_distances(const Maze& maze, Cell from) {
  std::vector<int> dist(std::size_t(maze.height() * maze.width()), -1);
  std::deque<Cell> queue{from};
  dist[std::size_t(from.row * maze.width() + from.col)] = 0;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    for (const auto& [dr, dc] : kNeighbours) {
      const Cell n{c.row + dr, c.col + dc};
      if (maze.is_wall(n)) continue;
      int& d = dist[std::size_t(n.row * maze.width() + n.col)];
      if (d >= 0) continue;
      d = dist[std::size_t(c.row * maze.width() + c.col)] + 1;
      queue.push_back(n);
    }
  }
  return dist;
}

}  // namespace

Maze::Maze(int height, int width, std::vector<bool> walls, Cell start)
    : height_(height), width_(width), walls_(std::move(walls)), start_(start) {
  if (height_ <= 0 || width_ <= 0 || walls_.size() != std::size_t(height_ * width_)) {
    fail(ErrorKind::invalid_argument, "maze: wall grid does not match " + std::to_string(height_) + "x" +
                                          std::to_string(width_));
  }
  validate();
}

Maze Maze::parse(std::string_view text) {
  std::vector<std::string> lines;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  if (lines.empty()) fail(ErrorKind::invalid_argument, "maze: empty text");
  const int h = int(lines.size());
  const int w = int(lines.front().size());
  std::vector<bool> walls;
  Cell start{-1, -1};
  for (int r = 0; r < h; ++r) {
    if (int(lines[std::size_t(r)].size()) != w) {
      fail(ErrorKind::invalid_argument, "maze: row " + std::to_string(r) + " has ragged width");
    }
    for (int c = 0; c < w; ++c) {
      const char ch = lines[std::size_t(r)][std::size_t(c)];
      if (ch == '#') {
        walls.push_back(true);
      } else if (ch == '.' || ch == 'S') {
        walls.push_back(false);
        if (ch == 'S') {
          if (start.row >= 0) fail(ErrorKind::invalid_argument, "maze: more than one start cell");
          start = {r, c};
        }
      } else {
        fail(ErrorKind::invalid_argument, std::string("maze: unexpected character '") + ch + "'");
      }
    }
  }
  if (start.row < 0) fail(ErrorKind::invalid_argument, "maze: no start cell 'S'");
  return Maze(h, w, std::move(walls), start);
}

Maze Maze::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "maze: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

Maze Maze::desk() {
  return parse(
      "######\n"
      "#....#\n"
      "#.##.#\n"
      "#..S.#\n"
      "#....#\n"
      "######\n");
}

Maze Maze::random(int height, int width, double wall_prob, Rng& rng) {
  if (height < 3 || width < 3) fail(ErrorKind::invalid_argument, "maze: random maze needs at least 3x3");
  const Cell start{height / 2, width / 2};
  for (;;) {
    std::vector<bool> walls(std::size_t(height * width), false);
    for (int r = 0; r < height; ++r) {
      for (int c = 0; c < width; ++c) {
        const bool border = r == 0 || c == 0 || r == height - 1 || c == width - 1;
        walls[std::size_t(r * width + c)] = border || (Cell{r, c} != start && rng.uniform() < wall_prob);
      }
    }
    // Wall off unreachable pockets instead of rejecting the draw.
    Maze candidate;
    candidate.height_ = height;
    candidate.width_ = width;
    candidate.walls_ = walls;
    candidate.start_ = start;
    const std::vector<int> dist = bfs_distances(candidate, start);
    int open = 0;
    for (std::size_t i = 0; i < walls.size(); ++i) {
      if (!walls[i] && dist[i] < 0) walls[i] = true;
      open += walls[i] ? 0 : 1;
    }
    if (open >= 3) return Maze(height, width, std::move(walls), start);
  }
}

std::string Maze::to_text() const {
  std::string out;
  for (int r = 0; r < height_; ++r) {
    for (int c = 0; c < width_; ++c) {
      out += Cell{r, c} == start_ ? 'S' : (is_wall(Cell{r, c}) ? '#' : '.');
    }
    out += '\n';
  }
  return out;
}

bool Maze::is_wall_at(double x, double y) const { return is_wall(cell_of(x, y)); }

Cell Maze::cell_of(double x, double y) { return Cell{int(std::floor(y)), int(std::floor(x))}; }

std::vector<Cell> Maze::open_cells() const {
  std::vector<Cell> cells;
  for (int r = 0; r < height_; ++r) {
    for (int c = 0; c < width_; ++c) {
      if (is_open(Cell{r, c})) cells.push_back(Cell{r, c});
    }
  }
  return cells;
}

std::vector<int> Maze::open_rows() const {
  std::vector<int> rows;
  for (int r = 0; r < height_; ++r) {
    for (int c = 0; c < width_; ++c) {
      if (is_open(Cell{r, c})) {
        rows.push_back(r);
        break;
      }
    }
  }
  return rows;
}

void Maze::validate() const {
  if (is_wall(start_)) fail(ErrorKind::invalid_argument, "maze: start cell is a wall");
  for (int r = 0; r < height_; ++r) {
    for (int c = 0; c < width_; ++c) {
      const bool border = r == 0 || c == 0 || r == height_ - 1 || c == width_ - 1;
      if (border && is_open(Cell{r, c})) {
        fail(ErrorKind::invalid_argument,
             "maze: border cell (" + std::to_string(r) + "," + std::to_string(c) + ") is open");
      }
    }
  }
  const std::vector<int> dist = bfs_distances(*this, start_);
  for (const Cell& c : open_cells()) {
    if (dist[std::size_t(c.row * width_ + c.col)] < 0) {
      fail(ErrorKind::invalid_argument,
           "maze: cell (" + std::to_string(c.row) + "," + std::to_string(c.col) + ") unreachable from start");
    }
  }
}

StepResult step(const Maze& maze, const State& state, const Action& action, const Task& task, const EnvParams& params) {
  const double vx = std::clamp(action[0], -1.0, 1.0);
  const double vy = std::clamp(action[1], -1.0, 1.0);
  StepResult res;
  double x = state[0], y = state[1];
  double nvx = vx, nvy = vy;
  const double cx = x + params.dt * vx;
  if (maze.is_wall_at(cx, y)) {
    nvx = 0.0;
  } else {
    x = cx;
  }
  const double cy = y + params.dt * vy;
  if (maze.is_wall_at(x, cy)) {
    nvy = 0.0;
  } else {
    y = cy;
  }
  res.state = {x, y, nvx, nvy};
  const double dx = x - task.goal[0], dy = y - task.goal[1];
  if (std::sqrt(dx * dx + dy * dy) <= params.goal_radius) {
    res.reward = 1.0;
    res.done = true;
    res.success = true;
  }
  return res;
}

State start_state(const Maze& maze) {
  const auto c = Maze::center(maze.start());
  return {c[0], c[1], 0.0, 0.0};
}

MazeEnv::MazeEnv(const Maze& maze, Task task, EnvParams params) : maze_(&maze), task_(task), params_(params) {
  reset();
}

const State& MazeEnv::reset() {
  state_ = start_state(*maze_);
  steps_ = 0;
  done_ = false;
  return state_;
}

StepResult MazeEnv::step(const Action& action) {
  if (done_) fail(ErrorKind::invalid_argument, "env: step called on a finished episode");
  StepResult r = dcmrl::step(*maze_, state_, action, task_, params_);
  ++steps_;
  if (steps_ >= params_.step_cap) r.done = true;
  state_ = r.state;
  done_ = r.done;
  return r;
}

std::vector<Cell> plan_path(const Maze& maze, Cell start, Cell goal) {
  if (maze.is_wall(start) || maze.is_wall(goal)) fail(ErrorKind::invalid_argument, "plan_path: endpoint is a wall");
  if (start == goal) return {};
  const int w = maze.width();
  std::vector<int> parent(std::size_t(maze.height() * w), -1);
  std::vector<bool> seen(parent.size(), false);
  std::deque<Cell> queue{start};
  seen[std::size_t(start.row * w + start.col)] = true;
  while (!queue.empty()) {
    const Cell c = queue.front();
    queue.pop_front();
    if (c == goal) break;
    for (const auto& [dr, dc] : kNeighbours) {
      const Cell n{c.row + dr, c.col + dc};
      if (maze.is_wall(n) || seen[std::size_t(n.row * w + n.col)]) continue;
      seen[std::size_t(n.row * w + n.col)] = true;
      parent[std::size_t(n.row * w + n.col)] = c.row * w + c.col;
      queue.push_back(n);
    }
  }
  if (!seen[std::size_t(goal.row * w + goal.col)]) fail(ErrorKind::invalid_argument, "plan_path: goal unreachable");
  std::vector<Cell> path;
  for (int at = goal.row * w + goal.col; at >= 0; at = parent[std::size_t(at)]) {
    path.push_back(Cell{at / w, at % w});
    if (Cell{at / w, at % w} == start) break;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

bool in_region(const Maze& maze, Cell c, Region region, double fraction) {
  if (region == Region::any) return true;
  const std::vector<int> rows = maze.open_rows();
  const std::size_t n = std::max<std::size_t>(1, std::size_t(std::ceil(fraction * double(rows.size()))));
  if (region == Region::top) return c.row <= rows[n - 1];
  return c.row >= rows[rows.size() - n];
}

TaskSets make_task_sets(const Maze& maze, int n_train, int n_target, std::uint64_t seed,
                        const TaskSetOptions& options) {
  if (n_train < 0 || n_target < 0) fail(ErrorKind::invalid_argument, "task sets: negative task count");
  std::vector<Cell> candidates;
  for (const Cell& c : maze.open_cells()) {
    if (c != maze.start()) candidates.push_back(c);
  }
  if (std::size_t(n_train + n_target) > candidates.size()) {
    fail(ErrorKind::invalid_argument, "task sets: " + std::to_string(n_train + n_target) + " goals requested but only " +
                                          std::to_string(candidates.size()) + " open non-start cells");
  }
  Rng rng = Rng::stream(seed, "tasks");
  std::shuffle(candidates.begin(), candidates.end(), rng.engine());

  auto take = [&](int n, Region region, int first_id, const char* which) {
    std::vector<Task> out;
    for (auto it = candidates.begin(); it != candidates.end() && int(out.size()) < n;) {
      if (in_region(maze, *it, region, options.region_fraction)) {
        out.push_back(Task{first_id + int(out.size()), Maze::center(*it), *it});
        it = candidates.erase(it);
      } else {
        ++it;
      }
    }
    if (int(out.size()) < n) {
      fail(ErrorKind::invalid_argument, std::string("task sets: not enough open cells in region '") +
                                            to_string(region) + "' for " + which + " tasks");
    }
    return out;
  };
  TaskSets sets;
  sets.train = take(n_train, options.train_region, 0, "train");
  sets.target = take(n_target, options.target_region, n_train, "target");
  return sets;
}

Region parse_region(std::string_view s) {
  if (s == "any") return Region::any;
  if (s == "top") return Region::top;
  if (s == "bottom") return Region::bottom;
  fail(ErrorKind::config, "unknown region '" + std::string(s) + "' (expected any|top|bottom)");
}

const char* to_string(Region r) {
  switch (r) {
    case Region::any: return "any";
    case Region::top: return "top";
    case Region::bottom: return "bottom";
  }
  return "any";
}

}  // namespace dcmrl
