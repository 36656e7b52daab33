#include <string>

#include "CLI11.hpp"
#include "safer/evalcli.hpp"

int main(int argc, char** argv) {
  CLI::App app{"SAFER experiment pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir;
  bool seed_set = false, out_set = false;

  const char* commands[] = {"collect", "train-prior", "bound",    "train-rl",
                            "audit",   "calibrate",   "tradeoff", "report"};
  for (const char* name : commands) {
    CLI::App* sub = app.add_subcommand(name);
    sub->add_option("--config", config_path, "experiment config file")->required();
    sub->add_option("--seed", seed, "suite seed override")
        ->each([&](const std::string&) { seed_set = true; });
    sub->add_option("--out", out_dir, "output directory override")
        ->each([&](const std::string&) { out_set = true; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  return safer::run_command(command, config_path, seed_set ? &seed : nullptr,
                            out_set ? &out_dir : nullptr);
}
