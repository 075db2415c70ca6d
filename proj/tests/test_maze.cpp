#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>

#include "dcmrl/dataset.hpp"
#include "dcmrl/error.hpp"
#include "dcmrl/maze.hpp"

using namespace dcmrl;

namespace {

Task goal_task(Cell c) { return Task{0, Maze::center(c), c}; }

// Exhaustive oracle: shortest simple path length by DFS over all paths.
int brute_force_shortest(const Maze& maze, Cell from, Cell to) {
  int best = -1;
  std::set<std::pair<int, int>> visited{{from.row, from.col}};
  std::function<void(Cell, int)> dfs = [&](Cell c, int len) {
    if (best >= 0 && len >= best) return;
    if (c == to) {
      best = len;
      return;
    }
    const int moves[4][2] = {{-1, 0}, {1, 0}, {0, -1}, {0, 1}};
    for (const auto& m : moves) {
      const Cell n{c.row + m[0], c.col + m[1]};
      if (maze.is_wall(n) || visited.count({n.row, n.col})) continue;
      visited.insert({n.row, n.col});
      dfs(n, len + 1);
      visited.erase({n.row, n.col});
    }
  };
  dfs(from, 0);
  return best;
}

}  // namespace

TEST_CASE("maze text round-trips and validates") {
  const Maze m = Maze::desk();
  CHECK(m.height() == 6);
  CHECK(m.width() == 6);
  CHECK(Maze::parse(m.to_text()).to_text() == m.to_text());
  CHECK_THROWS_AS(Maze::parse("###\n#S.\n###\n"), Error);     // open border
  CHECK_THROWS_AS(Maze::parse("#####\n#S#.#\n#####\n"), Error);  // unreachable cell
  CHECK_THROWS_AS(Maze::parse("###\n#.#\n###\n"), Error);     // no start
}

TEST_CASE("step: free motion, wall collision, goal") {
  const Maze m = Maze::desk();  // start (3,3); (3,4) open, (3,5) wall
  const Task far = goal_task(Cell{1, 1});
  State s{3.5, 3.5, 0.0, 0.0};
  StepResult r = step(m, s, Action{1.0, 0.0}, far);
  CHECK(r.state[0] == doctest::Approx(3.6));
  CHECK(r.state[1] == 3.5);
  CHECK(r.reward == 0.0);
  CHECK_FALSE(r.done);

  State at_wall{4.95, 3.5, 0.3, 0.0};
  r = step(m, at_wall, Action{1.0, 0.0}, far);
  CHECK(r.state[0] == 4.95);
  CHECK(r.state[2] == 0.0);

  const Task near = goal_task(Cell{3, 4});
  r = step(m, State{4.0, 3.5, 0.0, 0.0}, Action{1.0, 0.0}, near);
  CHECK(r.reward == 1.0);
  CHECK(r.done);
}

TEST_CASE("env rejects stepping a finished episode and caps episodes") {
  const Maze m = Maze::desk();
  MazeEnv env(m, goal_task(Cell{1, 1}), EnvParams{.step_cap = 5});
  for (int i = 0; i < 5; ++i) env.step(Action{0.0, 0.0});
  CHECK(env.done());
  CHECK_THROWS_AS(env.step(Action{0.0, 0.0}), Error);
}

TEST_CASE("no reachable state is inside a wall; rewards are sparse") {
  Rng rng(17);
  const Maze m = Maze::random(8, 8, 0.25, rng);
  const std::vector<Cell> open = m.open_cells();
  Task task = goal_task(open.back());
  State s = start_state(m);
  int successes = 0;
  for (int i = 0; i < 100000; ++i) {
    const Action a{rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)};
    const StepResult r = step(m, s, a, task);
    REQUIRE_FALSE(m.is_wall_at(r.state[0], r.state[1]));
    REQUIRE((r.reward == 0.0 || (r.reward == 1.0 && r.done)));
    if (r.done) {
      ++successes;
      s = start_state(m);
    } else {
      s = r.state;
    }
  }
  CHECK(successes >= 0);
}

TEST_CASE("step is pure: replaying logged actions reproduces the trajectory") {
  const Maze m = Maze::desk();
  const Task task = goal_task(Cell{1, 1});
  Rng rng(4);
  std::vector<Action> actions;
  std::vector<State> states{start_state(m)};
  for (int i = 0; i < 200; ++i) {
    actions.push_back(Action{rng.uniform(-1, 1), rng.uniform(-1, 1)});
    states.push_back(step(m, states.back(), actions.back(), task).state);
  }
  State s = start_state(m);
  for (std::size_t i = 0; i < actions.size(); ++i) {
    s = step(m, s, actions[i], task).state;
    CHECK(s == states[i + 1]);
  }
}

TEST_CASE("plan_path basics") {
  const Maze open2 = Maze::parse("####\n#S.#\n#..#\n####\n");
  CHECK(plan_path(open2, Cell{1, 1}, Cell{1, 1}).empty());
  const std::vector<Cell> p = plan_path(open2, Cell{1, 1}, Cell{2, 2});
  CHECK(p.size() == 3);
  CHECK(p.front() == Cell{1, 1});
  CHECK(p.back() == Cell{2, 2});
  CHECK_THROWS_AS(plan_path(open2, Cell{0, 0}, Cell{1, 1}), Error);
}

TEST_CASE("plan_path length equals the exhaustive minimum on random 6x6 mazes") {
  Rng rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const Maze m = Maze::random(6, 6, 0.3, rng);
    const std::vector<Cell> cells = m.open_cells();
    for (const Cell& a : cells) {
      for (const Cell& b : cells) {
        const std::vector<Cell> p = plan_path(m, a, b);
        const int planned = p.empty() ? 0 : int(p.size()) - 1;
        REQUIRE(planned == brute_force_shortest(m, a, b));
        for (std::size_t i = 1; i < p.size(); ++i) {
          CHECK(std::abs(p[i].row - p[i - 1].row) + std::abs(p[i].col - p[i - 1].col) == 1);
        }
      }
    }
  }
}

TEST_CASE("dataset generation is deterministic and respects the minimum length") {
  const Maze m = Maze::desk();
  DatasetParams params;
  params.n_traj = 60;
  const OfflineDataset a = generate_dataset(m, params, EnvParams{}, 7);
  const OfflineDataset b = generate_dataset(m, params, EnvParams{}, 7);
  CHECK(encode_dataset(a) == encode_dataset(b));
  CHECK(a.trajectories.size() == 60);
  for (const auto& tr : a.trajectories) {
    CHECK(tr.size() >= 10);
    CHECK(tr.states.size() == tr.actions.size());
    for (const Action& act : tr.actions) {
      CHECK(std::abs(act[0]) <= 1.0);
      CHECK(std::abs(act[1]) <= 1.0);
    }
  }
  CHECK(encode_dataset(generate_dataset(m, params, EnvParams{}, 8)) != encode_dataset(a));
}

TEST_CASE("dataset codec: header layout and lossless round trip") {
  OfflineDataset d;
  d.trajectories.push_back(DatasetTrajectory{{State{1.5, 2.5, 0.25, -0.5}}, {Action{0.5, -1.0}}});
  const std::vector<std::uint8_t> bytes = encode_dataset(d);
  REQUIRE(bytes.size() == 4 + 4 * 4 + 4 + 6 * 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "DCMD");
  CHECK(bytes[4] == 1);  // version, little-endian
  CHECK(bytes[8] == 4);  // state_dim
  CHECK(bytes[12] == 2);  // action_dim
  CHECK(bytes[16] == 1);  // n_traj
  CHECK(bytes[20] == 1);  // length
  CHECK(decode_dataset(bytes) == d);

  DatasetParams params;
  params.n_traj = 20;
  const OfflineDataset g = generate_dataset(Maze::desk(), params, EnvParams{}, 3);
  CHECK(decode_dataset(encode_dataset(g)) == g);

  std::vector<std::uint8_t> bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(decode_dataset(bad), Error);
  bad = bytes;
  bad.pop_back();
  CHECK_THROWS_AS(decode_dataset(bad), Error);
}

TEST_CASE("noiseless controller reaches >= 95% of sampled goals") {
  const Maze m = Maze::desk();
  const std::vector<Cell> cells = m.open_cells();
  Rng rng(123);
  int reached = 0;
  const int runs = 500;
  for (int i = 0; i < runs; ++i) {
    const Cell a = cells[rng.index(cells.size())];
    Cell b = cells[rng.index(cells.size())];
    while (b == a) b = cells[rng.index(cells.size())];
    reached += run_controller(m, a, b, DatasetParams{}, EnvParams{}, nullptr).reached_goal ? 1 : 0;
  }
  CHECK(double(reached) / runs >= 0.95);
}

TEST_CASE("task sets: disjoint, region filtered, deterministic") {
  const Maze m = Maze::desk();
  const TaskSets s = make_task_sets(m, 8, 2, 5);
  std::set<std::pair<int, int>> goals;
  for (const Task& t : s.train) goals.insert({t.goal_cell.row, t.goal_cell.col});
  for (const Task& t : s.target) goals.insert({t.goal_cell.row, t.goal_cell.col});
  CHECK(goals.size() == 10);
  CHECK_FALSE(goals.count({m.start().row, m.start().col}));
  const TaskSets again = make_task_sets(m, 8, 2, 5);
  for (std::size_t i = 0; i < s.train.size(); ++i) CHECK(again.train[i].goal_cell == s.train[i].goal_cell);

  Rng rng(2);
  const Maze big = Maze::parse(
      "##########\n"
      "#........#\n"
      "#........#\n"
      "#..#..#..#\n"
      "#...S....#\n"
      "#..#..#..#\n"
      "#........#\n"
      "#........#\n"
      "##########\n");
  const TaskSets top = make_task_sets(big, 6, 2, 1, TaskSetOptions{Region::top, Region::bottom});
  for (const Task& t : top.train) CHECK(t.goal_cell.row <= 2);
  for (const Task& t : top.target) CHECK(t.goal_cell.row >= 6);

  CHECK_THROWS_AS(make_task_sets(m, 12, 2, 0), Error);
}
