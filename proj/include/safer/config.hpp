#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace safer {

// Bad or missing config values. Maps to CLI exit code 2.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// An upstream artifact (dataset, checkpoint, bound table) is absent or stale.
// Maps to CLI exit code 3.
struct MissingArtifact : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  // [suite]
  int n_train = 8;
  int n_eval = 3;
  std::uint64_t suite_seed = 0;

  // [collect]
  int collect_steps = 40000;
  double collect_noise = 0.3;
  int w = 16;

  // [prior]
  double lambda = 1e-4;
  int prior_steps = 4000;
  double lr = 1e-4;
  std::string optimizer = "sgd_momentum";
  int prior_batch = 64;
  int hidden = 64;
  int prior_seeds = 3;
  std::vector<std::string> variants = {"safer", "parrot", "contextual_parrot"};

  // [assurance]
  std::vector<double> eps_targets = {1.0, 0.85, 0.70, 0.55};
  double eta0 = 3.0;
  int assurance_rollouts = 20;

  // [rl]
  std::vector<std::string> pipelines = {"safer", "parrot", "contextual_parrot",
                                        "prior_explore", "scratch"};
  int env_steps = 20000;
  int rl_seeds = 3;
  double rl_eps_target = 0.85;

  // [output]
  std::string out_dir = "out";
};

ExperimentConfig load_config(const std::string& path);

}  // namespace safer
