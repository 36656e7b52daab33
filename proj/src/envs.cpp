#include "safer/envs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace safer {

namespace {

double clamp1(double x) { return std::clamp(x, -1.0, 1.0); }

// Distance from a point to the vertical segment x = wx, y in [y0, y1].
double dist_to_wall(const Vector2d& p, double wx, double y0, double y1) {
  const double dy = p.y() < y0 ? y0 - p.y() : (p.y() > y1 ? p.y() - y1 : 0.0);
  const double dx = p.x() - wx;
  return std::sqrt(dx * dx + dy * dy);
}

TaskSpec draw_task(Rng& rng, int task_id, double gap_lo, double gap_hi) {
  TaskSpec t;
  t.gap_width = rng.uniform(gap_lo, gap_hi);
  t.wall_depth = rng.uniform(0.3, 0.6);
  t.wall_center_x = rng.uniform(-0.22, 0.22);
  // The object sits off-center toward one wall, so the pickup approach and
  // the corner exit operate near the collision band but leave room for
  // moderate actuation jitter.
  const double slack = t.gap_width / 2.0 - 0.06;
  const double side = rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double ox = t.wall_center_x + side * slack;
  t.object_start = Vector2d(ox, t.slot_bottom_y() + 0.05);
  t.horizon = 100;
  t.task_id = task_id;
  return t;
}

}  // namespace

std::vector<TaskSpec> make_task_suite(int n_train, int n_eval, std::uint64_t seed) {
  if (n_train < 1 || n_eval < 1)
    throw std::invalid_argument("make_task_suite: counts must be >= 1");
  std::vector<TaskSpec> tasks;
  tasks.reserve(n_train + n_eval);
  Rng rng(Rng::mix(seed, 0xe5f5));
  for (int i = 0; i < n_train; ++i) tasks.push_back(draw_task(rng, i, 0.2, 0.5));
  // Eval tasks come from the narrow-gap third of the range.
  for (int i = 0; i < n_eval; ++i)
    tasks.push_back(draw_task(rng, n_train + i, 0.2, 0.3));
  return tasks;
}

EnvState reset(const TaskSpec& task) {
  EnvState s;
  // Start at the slot mouth, just above the walls.
  s.proprio << task.wall_center_x, task.slot_top_y() + 0.05, 0.0, task.object_start.x(),
      task.object_start.y();
  s.geometry << task.left_wall_x(), task.right_wall_x(), task.slot_top_y(), task.slot_bottom_y();
  return s;
}

StepOutcome step(const EnvState& state, const Vector2d& action, const TaskSpec& task,
                 int t) {
  if (!std::isfinite(action.x()) || !std::isfinite(action.y()))
    throw std::invalid_argument("step: non-finite action");
  const Vector2d a(clamp1(action.x()), clamp1(action.y()));

  Vector2d grip(state.proprio(0), state.proprio(1));
  bool holding = state.proprio(2) > 0.5;
  Vector2d object(state.proprio(3), state.proprio(4));

  grip += kActionScale * a;
  grip.x() = clamp1(grip.x());
  grip.y() = clamp1(grip.y());

  if (!holding && (grip - object).norm() <= kGraspRadius) holding = true;
  if (holding) object = grip;

  const double y0 = task.slot_bottom_y();
  const double y1 = task.slot_top_y();
  const bool hit = dist_to_wall(grip, task.left_wall_x(), y0, y1) < kCollisionBand ||
                   dist_to_wall(grip, task.right_wall_x(), y0, y1) < kCollisionBand;

  StepOutcome out;
  out.next_state.proprio << grip.x(), grip.y(), holding ? 1.0 : 0.0, object.x(), object.y();
  out.next_state.geometry = state.geometry;
  out.violation = hit ? 1 : 0;
  out.success = holding && grip.y() > y1;
  out.reward = out.success ? 1.0 : -1.0;
  out.done = out.success || (t >= 0 && t + 1 >= task.horizon);
  return out;
}

Vector2d scripted_policy(const EnvState& state, double noise_scale, Rng& rng) {
  if (noise_scale < 0.0) throw std::invalid_argument("scripted_policy: negative noise");
  const bool holding = state.proprio(2) > 0.5;
  const Vector2d grip(state.proprio(0), state.proprio(1));
  Vector2d target;
  if (!holding) {
    target = Vector2d(state.proprio(3), state.proprio(4));
  } else {
    // Ascend vertically through the slot center.
    const double center_x = 0.5 * (state.geometry(0) + state.geometry(1));
    target = Vector2d(center_x, state.geometry(2) + 0.3);
  }
  const Vector2d delta = target - grip;
  // Conservative controller: at most half speed, exact snap when close.
  Vector2d a(std::clamp(delta.x() / kActionScale, -0.22, 0.22),
             std::clamp(delta.y() / kActionScale, -0.22, 0.22));
  if (noise_scale > 0.0) {
    a.x() += noise_scale * rng.normal();
    a.y() += noise_scale * rng.normal();
  }
  a.x() = clamp1(a.x());
  a.y() = clamp1(a.y());
  return a;
}

}  // namespace safer
