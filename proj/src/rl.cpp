#include "safer/rl.hpp"

#include <cmath>

#include "safer/assurance.hpp"
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace safer {

namespace {
constexpr double kSquashEps = 1e-6;
}

void ReplayBuffer::push(const Transition& t) {
  if (buf_.size() < capacity_) {
    buf_.push_back(t);
  } else {
    buf_[next_] = t;
    next_ = (next_ + 1) % capacity_;
  }
}

PolicyEval policy_forward(const Mlp& policy, const MatrixXd& S, const MatrixXd& eps,
                          double scale, const SacConfig& cfg) {
  PolicyEval ev;
  const MatrixXd out = policy.forward_cached(S, ev.cache);
  const int d = cfg.act_dim;
  ev.mean = out.leftCols(d);
  ev.log_std = out.rightCols(d);
  ev.clamp_mask = MatrixXd::Ones(out.rows(), d);
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (int j = 0; j < d; ++j) {
      if (ev.log_std(i, j) < cfg.log_std_min) {
        ev.log_std(i, j) = cfg.log_std_min;
        ev.clamp_mask(i, j) = 0.0;
      } else if (ev.log_std(i, j) > cfg.log_std_max) {
        ev.log_std(i, j) = cfg.log_std_max;
        ev.clamp_mask(i, j) = 0.0;
      }
    }
  }
  ev.stddev = ev.log_std.array().exp();
  ev.u = ev.mean + ev.stddev.cwiseProduct(eps);
  ev.tanh_u = ev.u.array().tanh();
  ev.z = scale * ev.tanh_u;
  ev.logp = VectorXd::Zero(out.rows());
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    double lp = 0.0;
    for (int j = 0; j < d; ++j) {
      lp += -0.5 * kLog2Pi - ev.log_std(i, j) - 0.5 * eps(i, j) * eps(i, j);
      const double t = ev.tanh_u(i, j);
      lp -= std::log(scale * (1.0 - t * t) + kSquashEps);
    }
    ev.logp(i) = lp;
  }
  return ev;
}

double sac_critic_loss(const Mlp& q, const MatrixXd& state_action, const VectorXd& targets,
                       MlpGrad* grad) {
  Mlp::Cache cache;
  const VectorXd pred = q.forward_cached(state_action, cache).col(0);
  const VectorXd err = pred - targets;
  const double loss = err.squaredNorm() / static_cast<double>(err.size());
  if (grad) {
    const MatrixXd dOut = (2.0 / static_cast<double>(err.size())) * err;
    grad->backward(q, cache, dOut);
  }
  return loss;
}

double sac_policy_loss(const Mlp& policy, const Mlp& q1, const Mlp& q2, double alpha,
                       double scale, const MatrixXd& S, const MatrixXd& eps,
                       const SacConfig& cfg, MlpGrad* grad, double* mean_logp) {
  const auto n = S.rows();
  const int d = cfg.act_dim;
  PolicyEval ev = policy_forward(policy, S, eps, scale, cfg);

  MatrixXd sa(n, S.cols() + d);
  sa.leftCols(S.cols()) = S;
  sa.rightCols(d) = ev.z;
  Mlp::Cache c1, c2;
  const VectorXd v1 = q1.forward_cached(sa, c1).col(0);
  const VectorXd v2 = q2.forward_cached(sa, c2).col(0);

  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    loss += alpha * ev.logp(i) - std::min(v1(i), v2(i));
  loss /= static_cast<double>(n);
  if (mean_logp) *mean_logp = ev.logp.mean();
  if (!grad) return loss;

  const double inv_n = 1.0 / static_cast<double>(n);
  // d loss / d z via the smaller critic's input gradient.
  MatrixXd dOut1 = MatrixXd::Zero(n, 1);
  MatrixXd dOut2 = MatrixXd::Zero(n, 1);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (v1(i) <= v2(i))
      dOut1(i, 0) = -inv_n;
    else
      dOut2(i, 0) = -inv_n;
  }
  MlpGrad g1(q1), g2(q2);  // critic parameter grads discarded
  const MatrixXd dSa = g1.backward(q1, c1, dOut1) + g2.backward(q2, c2, dOut2);
  const MatrixXd dZ = dSa.rightCols(d);

  MatrixXd dMean(n, d), dLogStd(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      const double t = ev.tanh_u(i, j);
      const double sech2 = 1.0 - t * t;
      const double denom = scale * sech2 + kSquashEps;
      // logp's squash-correction term depends on u; the -log_std term is
      // handled separately below.
      const double dlogp_du = 2.0 * scale * t * sech2 / denom;
      const double du = dZ(i, j) * scale * sech2 + (alpha * inv_n) * dlogp_du;
      dMean(i, j) = du;
      dLogStd(i, j) =
          (du * eps(i, j) * ev.stddev(i, j) - alpha * inv_n) * ev.clamp_mask(i, j);
    }
  }
  MatrixXd dPolicyOut(n, 2 * d);
  dPolicyOut.leftCols(d) = dMean;
  dPolicyOut.rightCols(d) = dLogStd;
  grad->backward(policy, ev.cache, dPolicyOut);
  return loss;
}

SacAgent SacAgent::make(const SacConfig& cfg, double scale, std::uint64_t seed) {
  Rng rng(Rng::mix(seed, 0x5ac));
  SacAgent a;
  a.cfg = cfg;
  a.scale = scale;
  a.policy = Mlp::make({cfg.state_dim, cfg.hidden, cfg.hidden, 2 * cfg.act_dim}, rng);
  a.q1 = Mlp::make({cfg.state_dim + cfg.act_dim, cfg.hidden, cfg.hidden, 1}, rng);
  a.q2 = Mlp::make({cfg.state_dim + cfg.act_dim, cfg.hidden, cfg.hidden, 1}, rng);
  a.q1_target = a.q1;
  a.q2_target = a.q2;
  a.opt_policy = OptimizerState::make(OptKind::Adam, cfg.lr, a.policy.param_count());
  a.opt_q1 = OptimizerState::make(OptKind::Adam, cfg.lr, a.q1.param_count());
  a.opt_q2 = OptimizerState::make(OptKind::Adam, cfg.lr, a.q2.param_count());
  a.opt_alpha = OptimizerState::make(OptKind::Adam, cfg.lr, 1);
  a.replay = ReplayBuffer(cfg.replay_capacity);
  return a;
}

Vector2d SacAgent::sample_action(const Eigen::Matrix<double, 9, 1>& s, Rng& rng) const {
  MatrixXd eps(1, cfg.act_dim);
  for (int j = 0; j < cfg.act_dim; ++j) eps(0, j) = rng.normal();
  const PolicyEval ev = policy_forward(policy, s.transpose(), eps, scale, cfg);
  return Vector2d(ev.z(0, 0), ev.z(0, 1));
}

Vector2d SacAgent::mean_action(const Eigen::Matrix<double, 9, 1>& s) const {
  const MatrixXd eps = MatrixXd::Zero(1, cfg.act_dim);
  const PolicyEval ev = policy_forward(policy, s.transpose(), eps, scale, cfg);
  return Vector2d(ev.z(0, 0), ev.z(0, 1));
}

namespace {

void flat_step(Mlp& net, OptimizerState& opt, const MlpGrad& grad) {
  VectorXd params(net.param_count());
  net.to_flat(params.data());
  VectorXd g(grad.param_count());
  grad.to_flat(g.data());
  opt.step(params, g);
  net.from_flat(params.data());
}

void polyak(Mlp& target, const Mlp& net, double tau) {
  for (size_t i = 0; i < net.W.size(); ++i) {
    target.W[i] = (1.0 - tau) * target.W[i] + tau * net.W[i];
    target.b[i] = (1.0 - tau) * target.b[i] + tau * net.b[i];
  }
}

}  // namespace

void SacAgent::update(Rng& rng) {
  const auto n = static_cast<Eigen::Index>(std::min<std::size_t>(cfg.batch, replay.size()));
  if (n < 1) return;
  MatrixXd S(n, cfg.state_dim), S2(n, cfg.state_dim), A(n, cfg.act_dim);
  VectorXd R(n), done(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Transition& t = replay[rng.uniform_int(replay.size())];
    S.row(i) = t.s.transpose();
    S2.row(i) = t.s2.transpose();
    A.row(i) = t.a.transpose();
    R(i) = t.r;
    done(i) = t.done ? 1.0 : 0.0;
  }
  MatrixXd eps2(n, cfg.act_dim), eps_pi(n, cfg.act_dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < cfg.act_dim; ++j) {
      eps2(i, j) = rng.normal();
      eps_pi(i, j) = rng.normal();
    }

  // Bellman targets from the target critics and the current policy.
  const PolicyEval next_ev = policy_forward(policy, S2, eps2, scale, cfg);
  MatrixXd sa2(n, cfg.state_dim + cfg.act_dim);
  sa2.leftCols(cfg.state_dim) = S2;
  sa2.rightCols(cfg.act_dim) = next_ev.z;
  const VectorXd q1n = q1_target.forward(sa2).col(0);
  const VectorXd q2n = q2_target.forward(sa2).col(0);
  VectorXd y(n);
  const double a_coef = alpha();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = std::min(q1n(i), q2n(i)) - a_coef * next_ev.logp(i);
    y(i) = R(i) + cfg.gamma * (1.0 - done(i)) * v;
  }
  if (!all_finite(y)) return;

  MatrixXd sa(n, cfg.state_dim + cfg.act_dim);
  sa.leftCols(cfg.state_dim) = S;
  sa.rightCols(cfg.act_dim) = A;
  MlpGrad gq1(q1), gq2(q2);
  const double l1 = sac_critic_loss(q1, sa, y, &gq1);
  const double l2 = sac_critic_loss(q2, sa, y, &gq2);
  if (!std::isfinite(l1) || !std::isfinite(l2)) return;
  flat_step(q1, opt_q1, gq1);
  flat_step(q2, opt_q2, gq2);

  MlpGrad gp(policy);
  double mean_logp = 0.0;
  const double lp = sac_policy_loss(policy, q1, q2, a_coef, scale, S, eps_pi, cfg, &gp,
                                    &mean_logp);
  if (!std::isfinite(lp)) return;
  flat_step(policy, opt_policy, gp);

  // Temperature moves toward the entropy target.
  VectorXd alpha_param(1), alpha_grad(1);
  alpha_param(0) = log_alpha;
  alpha_grad(0) = -(mean_logp + cfg.entropy_target);
  opt_alpha.step(alpha_param, alpha_grad);
  log_alpha = alpha_param(0);

  polyak(q1_target, q1, cfg.tau);
  polyak(q2_target, q2, cfg.tau);
}

double Pipeline::action_scale() const {
  switch (kind) {
    case Kind::Safer:
      return eta;
    case Kind::Parrot:
    case Kind::ContextualParrot:
      return 3.0;  // effectively unbounded tanh scale
    case Kind::PriorExplore:
    case Kind::Scratch:
      return 1.0;
  }
  return 1.0;
}

Pipeline::Kind pipeline_kind_from_string(const std::string& s) {
  if (s == "safer") return Pipeline::Kind::Safer;
  if (s == "parrot") return Pipeline::Kind::Parrot;
  if (s == "contextual_parrot") return Pipeline::Kind::ContextualParrot;
  if (s == "prior_explore") return Pipeline::Kind::PriorExplore;
  if (s == "scratch") return Pipeline::Kind::Scratch;
  throw std::invalid_argument("unknown pipeline: " + s);
}

std::string to_string(Pipeline::Kind k) {
  switch (k) {
    case Pipeline::Kind::Safer:
      return "safer";
    case Pipeline::Kind::Parrot:
      return "parrot";
    case Pipeline::Kind::ContextualParrot:
      return "contextual_parrot";
    case Pipeline::Kind::PriorExplore:
      return "prior_explore";
    case Pipeline::Kind::Scratch:
      return "scratch";
  }
  return "?";
}

ActResult act(const Pipeline& pipeline, const SacAgent& agent,
              const Eigen::Matrix<double, 9, 1>& state, const MatrixXd& window, Rng& rng) {
  if (pipeline.kind != Pipeline::Kind::Scratch && pipeline.prior == nullptr)
    throw std::runtime_error("missing checkpoint for pipeline " + to_string(pipeline.kind));
  ActResult res;
  switch (pipeline.kind) {
    case Pipeline::Kind::Scratch: {
      res.stored = agent.sample_action(state, rng);
      res.executed = res.stored;
      break;
    }
    case Pipeline::Kind::Safer:
    case Pipeline::Kind::Parrot:
    case Pipeline::Kind::ContextualParrot: {
      const Vector2d z = agent.sample_action(state, rng);
      const VectorXd cond = pipeline.prior->cond_for(state, window);
      const VectorXd a = pipeline.prior->flow.forward(z, cond);
      res.stored = z;
      res.executed = Vector2d(a(0), a(1));
      break;
    }
    case Pipeline::Kind::PriorExplore: {
      if (rng.uniform() < pipeline.delta) {
        VectorXd z(2);
        z << rng.normal(), rng.normal();
        const VectorXd cond = pipeline.prior->cond_for(state, window);
        const VectorXd a = pipeline.prior->flow.forward(z, cond);
        res.executed = Vector2d(a(0), a(1));
      } else {
        res.executed = agent.sample_action(state, rng);
      }
      res.stored = res.executed;  // the agent learns in the raw action space
      break;
    }
  }
  return res;
}

long MetricsLog::cumulative_violations() const {
  long n = 0;
  for (const MetricsRow& r : rows) n += r.violation;
  return n;
}

double MetricsLog::success_rate_final_episodes(int n) const {
  // Outcome per completed episode, in order.
  std::vector<int> outcomes;
  int cur_episode = -1;
  int cur_success = 0;
  for (const MetricsRow& r : rows) {
    if (r.episode_id != cur_episode) {
      if (cur_episode >= 0) outcomes.push_back(cur_success);
      cur_episode = r.episode_id;
      cur_success = 0;
    }
    cur_success |= r.success;
  }
  if (cur_episode >= 0) outcomes.push_back(cur_success);
  if (outcomes.empty()) return 0.0;
  const int take = std::min<int>(n, static_cast<int>(outcomes.size()));
  double s = 0.0;
  for (int i = static_cast<int>(outcomes.size()) - take; i < static_cast<int>(outcomes.size());
       ++i)
    s += outcomes[i];
  return s / take;
}

MetricsLog train_downstream(const TaskSpec& task, const Pipeline& pipeline,
                            int total_env_steps, std::uint64_t seed, const SacConfig& cfg) {
  MetricsLog log;
  log.pipeline = to_string(pipeline.kind);
  log.task_id = task.task_id;
  log.seed = seed;

  Rng rng(Rng::mix(seed, Rng::mix(0xd01d, task.task_id)));
  SacAgent agent = SacAgent::make(cfg, pipeline.action_scale(), Rng::mix(seed, 0xa9e27));

  const int w = pipeline.prior ? pipeline.prior->w : 16;
  EnvState s = reset(task);
  MatrixXd window = MatrixXd::Zero(w, kStateDim);
  int episode_id = 0;
  int t = 0;

  for (int k = 0; k < total_env_steps; ++k) {
    for (int row = w - 1; row > 0; --row) window.row(row) = window.row(row - 1);
    window.row(0) = s.full().transpose();

    ActResult ar;
    if (k < cfg.warmup) {
      // Random exploration in the stored-action space, matched to the latent
      // distribution the prior was trained under (standard normal, truncated
      // to the pipeline's bound).
      Vector2d stored(truncated_normal(agent.scale, rng),
                      truncated_normal(agent.scale, rng));
      ar.stored = stored;
      if (pipeline.kind == Pipeline::Kind::Scratch ||
          pipeline.kind == Pipeline::Kind::PriorExplore) {
        ar.executed = stored;
      } else {
        const VectorXd cond = pipeline.prior->cond_for(s.full(), window);
        const VectorXd a = pipeline.prior->flow.forward(stored, cond);
        ar.executed = Vector2d(a(0), a(1));
      }
      if (pipeline.kind == Pipeline::Kind::PriorExplore && rng.uniform() < pipeline.delta) {
        VectorXd z(2);
        z << rng.normal(), rng.normal();
        const VectorXd cond = pipeline.prior->cond_for(s.full(), window);
        const VectorXd a = pipeline.prior->flow.forward(z, cond);
        ar.executed = Vector2d(a(0), a(1));
        ar.stored = ar.executed;
      }
    } else {
      ar = act(pipeline, agent, s.full(), window, rng);
    }

    const StepOutcome out = step(s, ar.executed, task, t);
    log.rows.push_back({k, out.reward, out.violation, episode_id, out.success ? 1 : 0});

    Transition tr;
    tr.s = s.full();
    tr.a = ar.stored;
    tr.r = out.reward;
    tr.s2 = out.next_state.full();
    tr.done = out.success;  // horizon timeouts do not mask the bootstrap
    agent.replay.push(tr);

    if (k >= cfg.warmup) agent.update(rng);

    if (out.done) {
      s = reset(task);
      window.setZero();
      ++episode_id;
      t = 0;
    } else {
      s = out.next_state;
      ++t;
    }
  }
  return log;
}

void write_metrics_csv(const MetricsLog& log, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "step,reward,violation,episode_id,success_flag,pipeline,task_id,seed\n";
  for (const MetricsRow& r : log.rows) {
    f << r.step << ',' << r.reward << ',' << r.violation << ',' << r.episode_id << ','
      << r.success << ',' << log.pipeline << ',' << log.task_id << ',' << log.seed << '\n';
  }
}

MetricsLog read_metrics_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path);
  MetricsLog log;
  std::string line;
  std::getline(f, line);  // header
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    MetricsRow r;
    std::getline(ss, field, ',');
    r.step = std::stoi(field);
    std::getline(ss, field, ',');
    r.reward = std::stod(field);
    std::getline(ss, field, ',');
    r.violation = std::stoi(field);
    std::getline(ss, field, ',');
    r.episode_id = std::stoi(field);
    std::getline(ss, field, ',');
    r.success = std::stoi(field);
    std::getline(ss, field, ',');
    log.pipeline = field;
    std::getline(ss, field, ',');
    log.task_id = std::stoi(field);
    std::getline(ss, field, ',');
    log.seed = std::stoull(field);
    log.rows.push_back(r);
  }
  return log;
}

}  // namespace safer
