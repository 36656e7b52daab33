#pragma once

#include <deque>
#include <string>

#include "safer/assurance.hpp"
#include "safer/training.hpp"

namespace safer {

struct SacConfig {
  int state_dim = kStateDim;
  int act_dim = 2;
  int hidden = 64;
  double gamma = 0.99;
  double tau = 0.005;  // Polyak step
  double lr = 3e-4;
  int batch = 64;
  std::size_t replay_capacity = 50000;
  int warmup = 1000;
  double entropy_target = -2.0;  // -dim(Z)
  double log_std_min = -5.0;
  double log_std_max = 2.0;
};

struct Transition {
  Eigen::Matrix<double, 9, 1> s;
  Vector2d a;  // stored action (abstract z or raw, per pipeline)
  double r = 0.0;
  Eigen::Matrix<double, 9, 1> s2;
  bool done = false;
};

class ReplayBuffer {
public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {}
  void push(const Transition& t);
  std::size_t size() const { return buf_.size(); }
  const Transition& operator[](std::size_t i) const { return buf_[i]; }

private:
  std::size_t capacity_;
  std::size_t next_ = 0;
  std::vector<Transition> buf_;
};

// Reparameterized tanh-squashed Gaussian policy evaluation with fixed noise.
struct PolicyEval {
  MatrixXd mean, log_std, stddev, u, tanh_u, z;
  MatrixXd clamp_mask;  // 1 where log_std was inside the clamp range
  VectorXd logp;
  Mlp::Cache cache;
};

PolicyEval policy_forward(const Mlp& policy, const MatrixXd& S, const MatrixXd& eps,
                          double scale, const SacConfig& cfg);

// Mean squared Bellman error of one critic on fixed targets.
double sac_critic_loss(const Mlp& q, const MatrixXd& state_action, const VectorXd& targets,
                       MlpGrad* grad);

// mean(alpha * log pi - min(Q1, Q2)) with gradients w.r.t. policy parameters
// only (critics held fixed).
double sac_policy_loss(const Mlp& policy, const Mlp& q1, const Mlp& q2, double alpha,
                       double scale, const MatrixXd& S, const MatrixXd& eps,
                       const SacConfig& cfg, MlpGrad* grad, double* mean_logp = nullptr);

struct SacAgent {
  SacConfig cfg;
  double scale = 1.0;  // action bound: |a_i| < scale by construction
  Mlp policy, q1, q2, q1_target, q2_target;
  double log_alpha = 0.0;
  OptimizerState opt_policy, opt_q1, opt_q2, opt_alpha;
  ReplayBuffer replay{50000};

  static SacAgent make(const SacConfig& cfg, double scale, std::uint64_t seed);

  Vector2d sample_action(const Eigen::Matrix<double, 9, 1>& s, Rng& rng) const;
  Vector2d mean_action(const Eigen::Matrix<double, 9, 1>& s) const;
  double alpha() const { return std::exp(log_alpha); }

  // One soft actor-critic update from a replay batch; skips on non-finite
  // losses.
  void update(Rng& rng);
};

struct Pipeline {
  enum class Kind { Safer, Parrot, ContextualParrot, PriorExplore, Scratch };
  Kind kind = Kind::Scratch;
  const PriorModel* prior = nullptr;  // required for all but Scratch
  double eta = 1.0;                   // Safer only
  double delta = 0.9;                 // PriorExplore only

  double action_scale() const;  // SAC output bound for this pipeline
};

Pipeline::Kind pipeline_kind_from_string(const std::string& s);
std::string to_string(Pipeline::Kind k);

struct ActResult {
  Vector2d executed;  // environment action
  Vector2d stored;    // what goes into the replay buffer
};

ActResult act(const Pipeline& pipeline, const SacAgent& agent,
              const Eigen::Matrix<double, 9, 1>& state, const MatrixXd& window, Rng& rng);

struct MetricsRow {
  int step = 0;
  double reward = 0.0;
  int violation = 0;
  int episode_id = 0;
  int success = 0;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;
  std::string pipeline;
  int task_id = 0;
  std::uint64_t seed = 0;

  long cumulative_violations() const;
  // Success rate over the final n completed episodes.
  double success_rate_final_episodes(int n = 50) const;
};

MetricsLog train_downstream(const TaskSpec& task, const Pipeline& pipeline,
                            int total_env_steps, std::uint64_t seed,
                            const SacConfig& cfg = SacConfig{});

void write_metrics_csv(const MetricsLog& log, const std::string& path);
MetricsLog read_metrics_csv(const std::string& path);

}  // namespace safer
