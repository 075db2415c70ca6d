#include "dcmrl/dataset.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "dcmrl/error.hpp"

namespace dcmrl {

namespace {

static_assert(std::endian::native == std::endian::little, "dataset codec assumes a little-endian host");

constexpr char kMagic[4] = {'D', 'C', 'M', 'D'};
constexpr std::uint32_t kVersion = 1;

// Kept out of line: GCC 11's SLP vectorizer at -O3 drops the float round trip
// when this is inlined into the rollout loop.
[[gnu::noinline]] double to_f32(double v) { return double(float(v)); }

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, double v) {
  const float f = float(v);
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

struct Reader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  std::uint32_t u32() {
    if (pos + 4 > bytes.size()) fail(ErrorKind::io, "dataset: truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes[pos + std::size_t(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  double f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return double(f);
  }
};

}  // namespace

bool OfflineDataset::operator==(const OfflineDataset& o) const {
  if (state_dim != o.state_dim || action_dim != o.action_dim || trajectories.size() != o.trajectories.size()) {
    return false;
  }
  for (std::size_t i = 0; i < trajectories.size(); ++i) {
    if (trajectories[i].states != o.trajectories[i].states || trajectories[i].actions != o.trajectories[i].actions) {
      return false;
    }
  }
  return true;
}

ControllerRollout run_controller(const Maze& maze, Cell start, Cell goal, const DatasetParams& params,
                                 const EnvParams& env, Rng* noise) {
  const std::vector<Cell> path = plan_path(maze, start, goal);
  const Task task{-1, Maze::center(goal), goal};
  const auto sc = Maze::center(start);
  State s{sc[0], sc[1], 0.0, 0.0};
  ControllerRollout out;
  std::size_t wp = 0;
  for (int t = 0; t < env.step_cap; ++t) {
    std::array<double, 2> target = path.empty() ? Maze::center(goal) : Maze::center(path[wp]);
    while (wp + 1 < path.size() && std::hypot(target[0] - s[0], target[1] - s[1]) < params.waypoint_radius) {
      target = Maze::center(path[++wp]);
    }
    Action a{};
    for (std::size_t k = 0; k < 2; ++k) {
      const double cmd = std::clamp(params.controller_gain * (target[k] - s[k]), -1.0, 1.0);
      a[k] = std::clamp(cmd + (noise ? params.action_noise * noise->normal() : 0.0), -1.0, 1.0);
    }
    const StepResult r = step(maze, s, a, task, env);
    out.trajectory.states.push_back(State{to_f32(s[0]), to_f32(s[1]), to_f32(s[2]), to_f32(s[3])});
    out.trajectory.actions.push_back(Action{to_f32(a[0]), to_f32(a[1])});
    s = r.state;
    if (r.success) {
      out.reached_goal = true;
      break;
    }
  }
  return out;
}

OfflineDataset generate_dataset(const Maze& maze, const DatasetParams& params, const EnvParams& env,
                                std::uint64_t seed) {
  if (params.n_traj < 1) fail(ErrorKind::invalid_argument, "generate_dataset: n_traj must be >= 1");
  const std::vector<Cell> cells = maze.open_cells();
  if (cells.size() < 2) fail(ErrorKind::invalid_argument, "generate_dataset: maze needs two open cells");
  Rng rng = Rng::stream(seed, "data");
  OfflineDataset data;
  while (int(data.trajectories.size()) < params.n_traj) {
    const Cell start = cells[rng.index(cells.size())];
    Cell goal = cells[rng.index(cells.size())];
    while (goal == start) goal = cells[rng.index(cells.size())];
    ControllerRollout run = run_controller(maze, start, goal, params, env, &rng);
    if (int(run.trajectory.size()) < params.min_length) continue;
    data.trajectories.push_back(std::move(run.trajectory));
  }
  return data;
}

std::vector<std::uint8_t> encode_dataset(const OfflineDataset& data) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, data.state_dim);
  put_u32(out, data.action_dim);
  put_u32(out, std::uint32_t(data.trajectories.size()));
  for (const DatasetTrajectory& tr : data.trajectories) {
    put_u32(out, std::uint32_t(tr.size()));
    for (std::size_t t = 0; t < tr.size(); ++t) {
      for (double v : tr.states[t]) put_f32(out, v);
      for (double v : tr.actions[t]) put_f32(out, v);
    }
  }
  return out;
}

OfflineDataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    fail(ErrorKind::io, "dataset: bad magic (expected DCMD)");
  }
  Reader in{bytes, 4};
  const std::uint32_t version = in.u32();
  if (version != kVersion) fail(ErrorKind::io, "dataset: unsupported version " + std::to_string(version));
  OfflineDataset data;
  data.state_dim = in.u32();
  data.action_dim = in.u32();
  if (data.state_dim != kStateDim || data.action_dim != kActionDim) {
    fail(ErrorKind::io, "dataset: dimensions " + std::to_string(data.state_dim) + "/" +
                            std::to_string(data.action_dim) + " do not match the maze environment");
  }
  const std::uint32_t n = in.u32();
  data.trajectories.resize(n);
  for (DatasetTrajectory& tr : data.trajectories) {
    const std::uint32_t len = in.u32();
    tr.states.resize(len);
    tr.actions.resize(len);
    for (std::uint32_t t = 0; t < len; ++t) {
      for (double& v : tr.states[t]) v = in.f32();
      for (double& v : tr.actions[t]) v = in.f32();
    }
  }
  if (in.pos != bytes.size()) fail(ErrorKind::io, "dataset: trailing bytes after last trajectory");
  return data;
}

void save_dataset(const OfflineDataset& data, const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = encode_dataset(data);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, "dataset: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

OfflineDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "dataset: cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_dataset(bytes);
}

}  // namespace dcmrl
