#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "safer/envs.hpp"
#include "safer/rng.hpp"

namespace safer {

// One (state, action) pair with its labels and the state window Lambda
// (most-recent-first, zero-padded before the episode start).
struct LabeledStep {
  Eigen::Matrix<double, 9, 1> state;
  Vector2d action;
  double reward = -1.0;
  std::uint8_t violation = 0;
  std::uint8_t in_successful_rollout = 0;
  Eigen::MatrixXd window;  // w x 9, row 0 = current state
  std::int32_t task_id = 0;
  std::int32_t episode_id = 0;
};

struct OfflineDataset {
  std::vector<LabeledStep> steps;
  int w = 16;
  std::uint32_t schema_version = 1;
  std::uint64_t suite_seed = 0;
  std::vector<TaskSpec> tasks;  // serialized in the file header
};

// Index view over a dataset (a partition or an episode split).
struct DatasetView {
  const OfflineDataset* ds = nullptr;
  std::vector<std::size_t> idx;

  std::size_t size() const { return idx.size(); }
  const LabeledStep& operator[](std::size_t i) const { return ds->steps[idx[i]]; }

  static DatasetView all(const OfflineDataset& d);
};

// Scripted rollouts round-robin over tasks until at least total_steps steps
// have been recorded (episodes are never truncated). Labels every step with
// its violation flag and, post hoc, with episode success. Throws
// "degenerate dataset" if either partition would be empty.
OfflineDataset collect(const std::vector<TaskSpec>& tasks, std::size_t total_steps,
                       double noise_scale, int w, std::uint64_t seed);

// D_safe: violation = 0 and in a successful rollout. D_unsafe: violation = 1.
// Safe steps from failed rollouts belong to neither.
std::pair<DatasetView, DatasetView> partition(const OfflineDataset& d);

// Uniform without replacement within a call.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k, Rng& rng);
std::vector<LabeledStep> sample_batch(const DatasetView& view, std::size_t batch_size,
                                      Rng& rng);

// Deterministic episode-level split; every out-of-five-th episode goes to
// the holdout side.
std::pair<DatasetView, DatasetView> split_by_episode(const OfflineDataset& d);

void save(const OfflineDataset& d, const std::string& path);
OfflineDataset load(const std::string& path);

}  // namespace safer
