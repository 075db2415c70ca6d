#include <CLI11.hpp>
#include <iostream>
#include <optional>
#include <string>

#include "dcmrl/error.hpp"
#include "dcmrl/pipeline.hpp"

using namespace dcmrl;

namespace {

constexpr int kUsage = 2;
constexpr int kConfig = 3;  // config violation or missing/mismatched input
constexpr int kRuntime = 4;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Config file (sectioned key = value)");
  cmd->add_option("--seed", c.seed, "Overrides the config seed");
  cmd->add_option("--out", c.out, "Output directory")->capture_default_str();
}

std::string one_line(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

int report(const char* kind, const std::string& msg, int code) {
  std::cerr << "error: " << kind << ": " << one_line(msg) << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Offline meta-RL with Gaussian-quantized skill and context codebooks", "dcmrl"};
  app.require_subcommand(1);
  Common common;
  int budget = 0;

  CLI::App* gen = app.add_subcommand("gen-data", "Generate the offline dataset");
  CLI::App* pre = app.add_subcommand("pretrain", "Pre-train the skill encoder, prior and low-level policy");
  CLI::App* meta = app.add_subcommand("meta-train", "Meta-train contexts, codebooks and the skill policy");
  CLI::App* test = app.add_subcommand("meta-test", "Condition, fine-tune and run the scratch baseline on target tasks");
  CLI::App* eval = app.add_subcommand("eval", "Condition and fine-tune on target tasks with a given budget");
  CLI::App* dump = app.add_subcommand("dump-codebook", "Write the meta-trained codebooks");
  for (CLI::App* cmd : {gen, pre, meta, test, eval, dump}) add_common(cmd, common);
  eval->add_option("--budget", budget, "Fine-tuning episodes; 0 reports zero-shot performance")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << '\n' << app.help();
    return kUsage;
  }
  if (eval->parsed() && budget < 0) {
    std::cerr << "error: usage: --budget must be >= 0\n" << eval->help();
    return kUsage;
  }

  try {
    RunConfig cfg = common.config.empty() ? RunConfig{} : load_config(common.config);
    if (common.seed) cfg.seed = *common.seed;
    validate(cfg);
    load_maze(cfg);
    const Logger log = [](const std::string& msg) { std::cerr << msg << '\n'; };
    const std::filesystem::path out = common.out;
    if (gen->parsed()) run_gen_data(cfg, out, log);
    if (pre->parsed()) run_pretrain(cfg, out, log);
    if (meta->parsed()) run_meta_train(cfg, out, log);
    if (test->parsed()) run_meta_test(cfg, out, log);
    if (eval->parsed()) run_eval(cfg, out, budget, log);
    if (dump->parsed()) run_dump_codebook(cfg, out, log);
  } catch (const Error& e) {
    const bool input = e.kind() == ErrorKind::config || e.kind() == ErrorKind::precondition;
    return report(to_string(e.kind()), e.what(), input ? kConfig : kRuntime);
  } catch (const std::exception& e) {
    return report("internal", e.what(), kRuntime);
  }
  return 0;
}
