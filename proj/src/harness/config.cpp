#include "dcmrl/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <variant>
#include <vector>

#include "dcmrl/error.hpp"

namespace dcmrl {

namespace {

using Slot = std::variant<int*, double*, std::uint64_t*, std::string*, bool*, CodebookMode*, NormMode*, Region*>;

struct Field {
  std::string section;
  std::string key;
  Slot slot;
  std::string name() const { return section.empty() ? key : section + "." + key; }
};

// Fixed order; serialize() and the hashes depend on it.
std::vector<Field> fields(RunConfig& c) {
  return {
      {"", "seed", &c.seed},
      {"", "maze", &c.maze},
      {"", "dataset", &c.dataset},
      {"", "checkpoint_dir", &c.checkpoint_dir},
      {"", "metrics_dir", &c.metrics_dir},

      {"env", "dt", &c.env.dt},
      {"env", "goal_radius", &c.env.goal_radius},
      {"env", "step_cap", &c.env.step_cap},
      {"env", "n_traj", &c.data.n_traj},
      {"env", "min_length", &c.data.min_length},
      {"env", "controller_gain", &c.data.controller_gain},
      {"env", "waypoint_radius", &c.data.waypoint_radius},
      {"env", "action_noise", &c.data.action_noise},
      {"env", "n_train", &c.n_train},
      {"env", "n_target", &c.n_target},
      {"env", "train_region", &c.tasks.train_region},
      {"env", "target_region", &c.tasks.target_region},
      {"env", "region_fraction", &c.tasks.region_fraction},

      {"pretrain", "horizon", &c.pretrain.horizon},
      {"pretrain", "skill_dim", &c.pretrain.skill_dim},
      {"pretrain", "alpha", &c.pretrain.alpha},
      {"pretrain", "batch", &c.pretrain.batch},
      {"pretrain", "steps", &c.pretrain.steps},
      {"pretrain", "hidden", &c.pretrain.hidden},
      {"pretrain", "layers", &c.pretrain.layers},
      {"pretrain", "lr", &c.pretrain.lr},

      {"gqvae", "context_codes", &c.gqvae.context_codes},
      {"gqvae", "skill_codes", &c.gqvae.skill_codes},
      {"gqvae", "eta", &c.gqvae.eta},
      {"gqvae", "iota", &c.gqvae.iota},
      {"gqvae", "mode", &c.gqvae.mode},
      {"gqvae", "norm", &c.gqvae.norm},
      {"gqvae", "downstream_encoder", &c.gqvae.downstream_encoder},
      {"gqvae", "maintenance_interval", &c.gqvae.maintenance_interval},

      {"meta", "context_dim", &c.meta.context_dim},
      {"meta", "lambda", &c.meta.lambda},
      {"meta", "gamma_skill", &c.meta.gamma_skill},
      {"meta", "margin", &c.meta.margin},
      {"meta", "w_triplet", &c.meta.w_triplet},
      {"meta", "beta_init", &c.meta.beta_init},
      {"meta", "beta_lr", &c.meta.beta_lr},
      {"meta", "target_kl", &c.meta.target_kl},
      {"meta", "n_c", &c.meta.n_c},
      {"meta", "n_mini", &c.meta.n_mini},
      {"meta", "task_batch", &c.meta.task_batch},
      {"meta", "skill_batch", &c.meta.skill_batch},
      {"meta", "bc_windows", &c.meta.bc_windows},
      {"meta", "discount", &c.meta.discount},
      {"meta", "tau", &c.meta.tau},
      {"meta", "buffer_capacity", &c.meta.buffer_capacity},
      {"meta", "episodes_per_task", &c.meta.episodes_per_task},
      {"meta", "warmup_episodes", &c.meta.warmup_episodes},
      {"meta", "updates_per_iter", &c.meta.updates_per_iter},
      {"meta", "hidden", &c.meta.hidden},
      {"meta", "layers", &c.meta.layers},
      {"meta", "lr", &c.meta.lr},
      {"meta", "init_high_from_prior", &c.meta.init_high_from_prior},

      {"adapt", "n_cond", &c.adapt.n_cond},
      {"adapt", "budget", &c.adapt.budget},
      {"adapt", "updates_per_episode", &c.adapt.updates_per_episode},
      {"adapt", "final_window", &c.adapt.final_window},
  };
}

std::vector<Field> fields(const RunConfig& c) { return fields(const_cast<RunConfig&>(c)); }

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"' || ch == '\\') out += '\\';
    out += ch;
  }
  return out + "\"";
}

std::string format(const Slot& slot) {
  struct {
    std::string operator()(int* v) const { return std::to_string(*v); }
    std::string operator()(double* v) const { return format_double(*v); }
    std::string operator()(std::uint64_t* v) const { return std::to_string(*v); }
    std::string operator()(std::string* v) const { return quote(*v); }
    std::string operator()(bool* v) const { return *v ? "true" : "false"; }
    std::string operator()(CodebookMode* v) const { return to_string(*v); }
    std::string operator()(NormMode* v) const { return to_string(*v); }
    std::string operator()(Region* v) const { return to_string(*v); }
  } visitor;
  return std::visit(visitor, slot);
}

std::string unquote(const std::string& raw, const std::string& where) {
  if (raw.size() < 2 || raw.front() != '"' || raw.back() != '"') return raw;
  std::string out;
  for (std::size_t i = 1; i + 1 < raw.size(); ++i) {
    if (raw[i] == '\\') {
      if (i + 2 >= raw.size()) fail(ErrorKind::config, where + ": dangling escape in string");
      ++i;
    }
    out += raw[i];
  }
  return out;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && p == end;
}

void assign(const Field& f, const std::string& raw, const std::string& where) {
  const auto type_error = [&](const char* type) {
    fail(ErrorKind::config, where + ": expected " + type + ", got '" + raw + "'");
  };
  if (auto p = std::get_if<int*>(&f.slot)) {
    if (!parse_number(raw, **p)) type_error("an integer");
  } else if (auto p = std::get_if<double*>(&f.slot)) {
    if (!parse_number(raw, **p) || !std::isfinite(**p)) type_error("a finite number");
  } else if (auto p = std::get_if<std::uint64_t*>(&f.slot)) {
    if (!parse_number(raw, **p)) type_error("a non-negative integer");
  } else if (auto p = std::get_if<std::string*>(&f.slot)) {
    **p = unquote(raw, where);
  } else if (auto p = std::get_if<bool*>(&f.slot)) {
    if (raw == "true") {
      **p = true;
    } else if (raw == "false") {
      **p = false;
    } else {
      type_error("true or false");
    }
  } else {
    try {
      const std::string v = unquote(raw, where);
      if (auto m = std::get_if<CodebookMode*>(&f.slot)) **m = parse_codebook_mode(v);
      if (auto m = std::get_if<NormMode*>(&f.slot)) **m = parse_norm_mode(v);
      if (auto m = std::get_if<Region*>(&f.slot)) **m = parse_region(v);
    } catch (const Error& e) {
      fail(ErrorKind::config, where + ": " + e.what());
    }
  }
}

struct Checker {
  const std::map<std::string, int>& lines;

  [[noreturn]] void reject(const std::string& key, const std::string& reason) const {
    const auto it = lines.find(key);
    const std::string at = it == lines.end() ? "default" : "line " + std::to_string(it->second);
    fail(ErrorKind::config, at + ": " + key + ": " + reason);
  }
  template <class T>
  void at_least(const std::string& key, T v, T lo) const {
    if (v < lo) reject(key, "must be >= " + std::to_string(lo) + ", got " + std::to_string(v));
  }
  void positive(const std::string& key, double v) const {
    if (!(v > 0.0)) reject(key, "must be > 0, got " + format_double(v));
  }
  void unit(const std::string& key, double v) const {
    if (!(v >= 0.0 && v <= 1.0)) reject(key, "must be in [0, 1], got " + format_double(v));
  }
};

std::uint64_t hash_sections(const RunConfig& cfg, std::initializer_list<std::string_view> sections) {
  std::string text = "seed=" + std::to_string(cfg.seed) + "\n";
  if (cfg.maze.empty()) {
    text += "maze=desk\n";
  } else {
    std::ifstream in(cfg.maze, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    text += "maze=" + ss.str() + "\n";
  }
  for (std::string_view s : sections) text += serialize_section(cfg, s);
  return fnv1a(text);
}

}  // namespace

bool RunConfig::operator==(const RunConfig& other) const { return serialize(*this) == serialize(other); }

RunConfig parse_config(std::string_view text) {
  RunConfig cfg;
  std::vector<Field> table = fields(cfg);
  std::map<std::string, int> lines;
  std::string section;
  int line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    const std::string where_line = "line " + std::to_string(line_no);
    // Drop comments outside quoted strings.
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
      if (line[i] == '#' && !quoted) {
        line.resize(i);
        break;
      }
    }
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') fail(ErrorKind::config, where_line + ": malformed section header '" + t + "'");
      section = trim(std::string_view(t).substr(1, t.size() - 2));
      if (section != "env" && section != "pretrain" && section != "gqvae" && section != "meta" && section != "adapt") {
        fail(ErrorKind::config, where_line + ": unknown section '" + section + "'");
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail(ErrorKind::config, where_line + ": expected 'key = value', got '" + t + "'");
    std::string key = trim(std::string_view(t).substr(0, eq));
    const std::string value = trim(std::string_view(t).substr(eq + 1));
    if (key.find('.') == std::string::npos && !section.empty()) key = section + "." + key;
    const std::string where = where_line + ": " + key;
    auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return f.name() == key; });
    if (it == table.end()) fail(ErrorKind::config, where + ": unknown key");
    if (lines.count(key)) fail(ErrorKind::config, where + ": duplicate key (first set on line " + std::to_string(lines[key]) + ")");
    if (value.empty()) fail(ErrorKind::config, where + ": missing value");
    assign(*it, value, where);
    lines[key] = line_no;
  }
  validate(cfg, lines);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::config, "config: cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void validate(const RunConfig& c, const std::map<std::string, int>& lines) {
  const Checker k{lines};
  k.positive("env.dt", c.env.dt);
  k.positive("env.goal_radius", c.env.goal_radius);
  k.at_least("env.step_cap", c.env.step_cap, 1);
  k.at_least("env.n_traj", c.data.n_traj, 1);
  k.at_least("env.min_length", c.data.min_length, 1);
  k.positive("env.controller_gain", c.data.controller_gain);
  k.positive("env.waypoint_radius", c.data.waypoint_radius);
  k.at_least("env.action_noise", c.data.action_noise, 0.0);
  k.at_least("env.n_train", c.n_train, 1);
  k.at_least("env.n_target", c.n_target, 1);
  if (!(c.tasks.region_fraction > 0.0 && c.tasks.region_fraction <= 1.0)) {
    k.reject("env.region_fraction", "must be in (0, 1], got " + format_double(c.tasks.region_fraction));
  }

  k.at_least("pretrain.horizon", c.pretrain.horizon, 1);
  if (c.data.min_length < c.pretrain.horizon) {
    k.reject("env.min_length", "must be >= pretrain.horizon (" + std::to_string(c.pretrain.horizon) + ")");
  }
  k.at_least("pretrain.skill_dim", c.pretrain.skill_dim, 1);
  k.at_least("pretrain.alpha", c.pretrain.alpha, 0.0);
  k.at_least("pretrain.batch", c.pretrain.batch, 1);
  k.at_least("pretrain.steps", c.pretrain.steps, 0);
  k.at_least("pretrain.hidden", c.pretrain.hidden, 1);
  k.at_least("pretrain.layers", c.pretrain.layers, 1);
  k.positive("pretrain.lr", c.pretrain.lr);

  k.at_least("gqvae.context_codes", c.gqvae.context_codes, 1);
  k.at_least("gqvae.skill_codes", c.gqvae.skill_codes, 1);
  k.at_least("gqvae.eta", c.gqvae.eta, 0.0);
  k.at_least("gqvae.iota", c.gqvae.iota, 0.0);
  k.at_least("gqvae.maintenance_interval", c.gqvae.maintenance_interval, 1);

  const MetaConfig& m = c.meta;
  k.at_least("meta.context_dim", m.context_dim, 1);
  k.at_least("meta.lambda", m.lambda, 0.0);
  k.at_least("meta.gamma_skill", m.gamma_skill, 0.0);
  k.at_least("meta.margin", m.margin, 0.0);
  k.at_least("meta.w_triplet", m.w_triplet, 0.0);
  k.positive("meta.beta_init", m.beta_init);
  k.at_least("meta.beta_lr", m.beta_lr, 0.0);
  k.positive("meta.target_kl", m.target_kl);
  k.at_least("meta.n_c", m.n_c, 1);
  if (m.n_mini < 2 * m.n_c) k.reject("meta.n_mini", "must be >= 2 * meta.n_c (" + std::to_string(2 * m.n_c) + ")");
  k.at_least("meta.task_batch", m.task_batch, 1);
  k.at_least("meta.skill_batch", m.skill_batch, 1);
  k.at_least("meta.bc_windows", m.bc_windows, 0);
  k.unit("meta.discount", m.discount);
  k.unit("meta.tau", m.tau);
  if (m.buffer_capacity < m.n_mini) k.reject("meta.buffer_capacity", "must be >= meta.n_mini");
  k.at_least("meta.episodes_per_task", m.episodes_per_task, 1);
  k.at_least("meta.warmup_episodes", m.warmup_episodes, 0);
  k.at_least("meta.updates_per_iter", m.updates_per_iter, 0);
  k.at_least("meta.hidden", m.hidden, 1);
  k.at_least("meta.layers", m.layers, 1);
  k.positive("meta.lr", m.lr);

  k.at_least("adapt.n_cond", c.adapt.n_cond, 0);
  k.at_least("adapt.budget", c.adapt.budget, 0);
  k.at_least("adapt.updates_per_episode", c.adapt.updates_per_episode, 0);
  k.at_least("adapt.final_window", c.adapt.final_window, 1);
}

std::string serialize_section(const RunConfig& cfg, std::string_view section) {
  std::string out;
  if (!section.empty()) out += "[" + std::string(section) + "]\n";
  for (const Field& f : fields(cfg)) {
    if (f.section == section) out += f.key + " = " + format(f.slot) + "\n";
  }
  return out;
}

std::string serialize(const RunConfig& cfg) {
  std::string out = serialize_section(cfg, "");
  for (std::string_view s : {"env", "pretrain", "gqvae", "meta", "adapt"}) out += "\n" + serialize_section(cfg, s);
  return out;
}

std::uint64_t config_hash(const RunConfig& cfg) { return fnv1a(serialize(cfg)); }

std::uint64_t dataset_hash(const RunConfig& cfg) { return hash_sections(cfg, {"env"}); }
std::uint64_t pretrain_hash(const RunConfig& cfg) { return hash_sections(cfg, {"env", "pretrain"}); }
std::uint64_t meta_hash(const RunConfig& cfg) { return hash_sections(cfg, {"env", "pretrain", "gqvae", "meta"}); }

}  // namespace dcmrl
