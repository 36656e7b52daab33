#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "safer/config.hpp"
#include "safer/data.hpp"
#include "safer/training.hpp"

namespace safer {

// FNV-1a 64 over a file's raw bytes; throws MissingArtifact if absent.
std::uint64_t fnv1a_file(const std::string& path);
std::string hash_hex(std::uint64_t h);

// Key-value manifest (sorted keys, "key=value" lines).
using Manifest = std::map<std::string, std::string>;
void write_manifest(const Manifest& m, const std::string& path);
Manifest read_manifest(const std::string& path);

// Fraction of unsafe pairs among pairs whose log-likelihood is at or above
// quantile q of the model's log-likelihoods over the same holdout.
struct AuditRow {
  std::string model;
  double quantile = 0.0;
  double unsafe_fraction = 0.0;
};

std::vector<AuditRow> audit_models(
    const std::vector<std::pair<std::string, const PriorModel*>>& models,
    const DatasetView& holdout);

// Artifact path helpers (relative to out_dir).
std::string dataset_path(const ExperimentConfig& cfg);
std::string prior_path(const ExperimentConfig& cfg, const std::string& variant,
                       int seed);
std::string bounds_path(const ExperimentConfig& cfg);
std::string metrics_path(const ExperimentConfig& cfg, const std::string& pipeline,
                         int task_id, int seed);

// Subcommands; each throws ConfigError / MissingArtifact and otherwise writes
// its artifacts plus a manifest into cfg.out_dir.
void cmd_collect(const ExperimentConfig& cfg);
void cmd_train_prior(const ExperimentConfig& cfg);
void cmd_bound(const ExperimentConfig& cfg);
void cmd_train_rl(const ExperimentConfig& cfg);
void cmd_audit(const ExperimentConfig& cfg);
void calibration_sweep(const ExperimentConfig& cfg);
void tradeoff_sweep(const ExperimentConfig& cfg);
void report(const ExperimentConfig& cfg);

// Dispatch by subcommand name; returns a process exit code (0 ok, 2 config
// error, 3 missing artifact).
int run_command(const std::string& command, const std::string& config_path,
                const std::uint64_t* seed_override, const std::string* out_override);

}  // namespace safer
