#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "safer/rng.hpp"

namespace safer {

using Eigen::Vector2d;

// A "slot extraction" task: pull the object up through the gap between two
// vertical wall segments without the gripper touching either wall.
struct TaskSpec {
  double gap_width = 0.3;     // in [0.2, 0.5]
  double wall_depth = 0.45;   // in [0.3, 0.6]
  double wall_center_x = 0.0;
  Vector2d object_start{0.0, 0.0};  // strictly inside the slot
  int horizon = 100;
  int task_id = 0;

  double slot_bottom_y() const { return -0.5; }
  double slot_top_y() const { return -0.5 + wall_depth; }
  double left_wall_x() const { return wall_center_x - gap_width / 2.0; }
  double right_wall_x() const { return wall_center_x + gap_width / 2.0; }
};

struct EnvState {
  // proprio: gripper x, gripper y, holding {0,1}, object x, object y
  Eigen::Matrix<double, 5, 1> proprio;
  // geometry: left wall x, right wall x, wall top y, wall bottom y
  Eigen::Matrix<double, 4, 1> geometry;

  Eigen::Matrix<double, 9, 1> full() const {
    Eigen::Matrix<double, 9, 1> s;
    s << proprio, geometry;
    return s;
  }
};

struct StepOutcome {
  EnvState next_state;
  double reward = -1.0;
  int violation = 0;
  bool done = false;
  bool success = false;
};

// Environment constants.
inline constexpr double kCollisionBand = 0.01;   // tau
inline constexpr double kGraspRadius = 0.03;
inline constexpr double kActionScale = 0.05;     // max displacement per axis

// n_train + n_eval distinct tasks; eval tasks drawn from the narrow-gap
// third of the gap range. Deterministic in seed.
std::vector<TaskSpec> make_task_suite(int n_train, int n_eval, std::uint64_t seed);

EnvState reset(const TaskSpec& task);

// t is the zero-based index of this step within the episode; done is set on
// success or when the horizon is exhausted. Pass t = -1 to let the caller
// track the horizon itself.
StepOutcome step(const EnvState& state, const Vector2d& action, const TaskSpec& task,
                 int t = -1);

// Proportional controller: descend toward the object until holding, then
// ascend through the slot center. Gaussian actuation noise with the given
// per-axis standard deviation, clipped to [-1, 1].
Vector2d scripted_policy(const EnvState& state, double noise_scale, Rng& rng);

}  // namespace safer
