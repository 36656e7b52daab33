// Release gate: stages a full desk-scale experiment through the CLI layer and
// checks the ten acceptance criteria, printing one PASS/FAIL line per
// criterion. Exits non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "safer/assurance.hpp"
#include "safer/checkpoint.hpp"
#include "safer/evalcli.hpp"
#include "safer/rl.hpp"

using namespace safer;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void verdict(int number, const std::string& name, bool pass, double secs) {
  std::printf("criterion %2d (%s): %s (%.1fs)\n", number, name.c_str(),
              pass ? "PASS" : "FAIL", secs);
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

VectorXd random_vec(Rng& rng, int n, double scale = 1.0) {
  VectorXd v(n);
  for (int i = 0; i < n; ++i) v(i) = scale * rng.normal();
  return v;
}

Flow random_flow(Rng& rng, const FlowConfig& cfg) {
  Flow f = Flow::make(cfg, rng);
  VectorXd p(f.param_count());
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = 0.4 * rng.normal();
  f.from_flat(p);
  return f;
}

PriorModel random_prior(Rng& rng, Conditioning cond, int w, int hidden) {
  PriorModel m = PriorModel::make(cond, w, rng, hidden);
  VectorXd p(m.param_count());
  for (Eigen::Index i = 0; i < p.size(); ++i) p(i) = 0.25 * rng.normal();
  m.from_flat(p);
  return m;
}

Batch random_batch(Rng& rng, int n, int w) {
  Batch b;
  b.states = MatrixXd(n, 9);
  b.actions = MatrixXd(n, 2);
  b.windows = MatrixXd(n, w * 9);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < 9; ++j) b.states(i, j) = rng.normal();
    for (int j = 0; j < 2; ++j) b.actions(i, j) = 0.5 * rng.normal();
    for (int j = 0; j < w * 9; ++j) b.windows(i, j) = rng.normal();
  }
  return b;
}

// ---------------------------------------------------------------------------
// Criterion 1: flow correctness.
void criterion_flow() {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;
  Rng rng(101);
  FlowConfig cfg;
  cfg.cond_dim = 13;
  cfg.hidden = 16;
  const Flow f = random_flow(rng, cfg);

  for (int trial = 0; trial < 1000; ++trial) {
    const VectorXd z = random_vec(rng, 2);
    const VectorXd cond = random_vec(rng, 13);
    const VectorXd a = f.forward(z, cond);
    const auto [z2, ld] = f.inverse(a, cond);
    if ((z2 - z).cwiseAbs().maxCoeff() >= 1e-6) pass = false;
  }

  const double h = 1e-6;
  for (int trial = 0; trial < 50; ++trial) {
    const VectorXd a = random_vec(rng, 2);
    const VectorXd cond = random_vec(rng, 13);
    Eigen::Matrix2d J;
    for (int j = 0; j < 2; ++j) {
      VectorXd ap = a, am = a;
      ap(j) += h;
      am(j) -= h;
      J.col(j) = (f.inverse(ap, cond).first - f.inverse(am, cond).first) / (2.0 * h);
    }
    const VectorXd z = f.inverse(a, cond).first;
    const double oracle = -0.5 * z.squaredNorm() - std::log(2.0 * M_PI) +
                          std::log(std::abs(J.determinant()));
    const double got = f.log_prob(a, cond);
    if (std::abs(got - oracle) / std::max(1.0, std::abs(oracle)) >= 1e-4) pass = false;
  }

  const Flow identity = Flow::make(cfg, rng);
  VectorXd a0 = VectorXd::Zero(2);
  if (std::abs(identity.log_prob(a0, random_vec(rng, 13)) + std::log(2.0 * M_PI)) > 1e-9)
    pass = false;

  const double secs = seconds_since(t0);
  verdict(1, "flow correctness", pass && secs < 10.0, secs);
}

// ---------------------------------------------------------------------------
// Criterion 2: finite-difference gradient suite over every trainable path.
void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;
  Rng rng(202);

  {  // Flow parameters and conditioner inputs.
    FlowConfig cfg;
    cfg.cond_dim = 4;
    cfg.hidden = 6;
    Flow f = random_flow(rng, cfg);
    MatrixXd A(3, 2), C(3, 4);
    for (int i = 0; i < 3; ++i) {
      A.row(i) = random_vec(rng, 2).transpose();
      C.row(i) = random_vec(rng, 4).transpose();
    }
    VectorXd coeff(3);
    coeff << 0.7, -1.3, 0.4;
    Flow::Cache cache;
    f.log_prob_batch(A, C, &cache);
    FlowGrad grad(f);
    grad.zero();
    const MatrixXd dC = f.log_prob_backward(cache, coeff, grad);
    VectorXd analytic;
    grad.to_flat(analytic);
    VectorXd p0(f.param_count());
    f.to_flat(p0);
    Flow probe = f;
    auto obj = [&](const VectorXd& p) {
      probe.from_flat(p);
      return (probe.log_prob_batch(A, C).array() * coeff.array()).sum();
    };
    if (max_relative_error(analytic, finite_difference_gradient(obj, p0)) >= 1e-4)
      pass = false;
    for (int i = 0; i < 3; ++i) {
      auto obj_c = [&](const VectorXd& c) {
        MatrixXd C2 = C;
        C2.row(i) = c.transpose();
        return (f.log_prob_batch(A, C2).array() * coeff.array()).sum();
      };
      if (max_relative_error(dC.row(i).transpose(),
                             finite_difference_gradient(obj_c, VectorXd(C.row(i)))) >= 1e-4)
        pass = false;
    }
  }

  {  // Window encoder.
    WindowEncoder enc = WindowEncoder::make(3, rng, 6);
    VectorXd pe(enc.param_count());
    for (Eigen::Index i = 0; i < pe.size(); ++i) pe(i) = 0.3 * rng.normal();
    enc.from_flat(pe);
    MatrixXd windows(3, 27), dMu(3, kContextDim), dSigma(3, kContextDim);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 27; ++j) windows(i, j) = rng.normal();
      for (int j = 0; j < kContextDim; ++j) {
        dMu(i, j) = rng.normal();
        dSigma(i, j) = rng.normal();
      }
    }
    WindowEncoder::Cache cache;
    MatrixXd mu, sigma;
    enc.posterior_batch(windows, mu, sigma, &cache);
    WindowEncoder::Grad grad(enc);
    grad.zero();
    enc.backward(cache, dMu, dSigma, grad);
    VectorXd analytic(enc.param_count());
    grad.embed.to_flat(analytic.data());
    grad.head.to_flat(analytic.data() + enc.embed.param_count());
    VectorXd p0(enc.param_count());
    enc.to_flat(p0);
    WindowEncoder probe = enc;
    auto obj = [&](const VectorXd& p) {
      probe.from_flat(p);
      MatrixXd m2, s2;
      probe.posterior_batch(windows, m2, s2);
      return (m2.array() * dMu.array()).sum() + (s2.array() * dSigma.array()).sum();
    };
    if (max_relative_error(analytic, finite_difference_gradient(obj, p0)) >= 1e-4)
      pass = false;
  }

  {  // Contrastive objective, context and full-state variants.
    for (const Conditioning cond : {Conditioning::ProprioContext, Conditioning::FullState}) {
      PriorModel m = random_prior(rng, cond, 3, 6);
      const Batch safe = random_batch(rng, 4, 3);
      const Batch unsafe_b = random_batch(rng, 3, 3);
      MatrixXd es(4, kContextDim), eu(3, kContextDim);
      for (int i = 0; i < 4; ++i)
        for (int j = 0; j < kContextDim; ++j) es(i, j) = rng.normal();
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < kContextDim; ++j) eu(i, j) = rng.normal();
      SaferConfig cfg;
      cfg.lambda = 0.7;
      cfg.unsafe_floor = -1e9;
      PriorGrad grad(m);
      grad.zero();
      contrastive_loss(m, safe, &unsafe_b, cfg, es, eu, nullptr, &grad);
      const VectorXd analytic = grad.to_flat();
      VectorXd p0(m.param_count());
      m.to_flat(p0);
      PriorModel probe = m;
      auto obj = [&](const VectorXd& p) {
        probe.from_flat(p);
        return contrastive_loss(probe, safe, &unsafe_b, cfg, es, eu, nullptr, nullptr);
      };
      if (max_relative_error(analytic, finite_difference_gradient(obj, p0)) >= 1e-4)
        pass = false;
    }
  }

  {  // SAC critic and policy losses.
    SacConfig cfg;
    cfg.hidden = 8;
    Mlp q = Mlp::make({11, 8, 1}, rng);
    VectorXd pq(q.param_count());
    for (Eigen::Index i = 0; i < pq.size(); ++i) pq(i) = 0.3 * rng.normal();
    q.from_flat(pq.data());
    MatrixXd sa(5, 11);
    VectorXd targets(5);
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 11; ++j) sa(i, j) = rng.normal();
      targets(i) = rng.normal();
    }
    MlpGrad gq(q);
    gq.zero();
    sac_critic_loss(q, sa, targets, &gq);
    VectorXd aq(q.param_count());
    gq.to_flat(aq.data());
    Mlp probe_q = q;
    auto obj_q = [&](const VectorXd& p) {
      probe_q.from_flat(p.data());
      return sac_critic_loss(probe_q, sa, targets, nullptr);
    };
    VectorXd q0(q.param_count());
    q.to_flat(q0.data());
    if (max_relative_error(aq, finite_difference_gradient(obj_q, q0)) >= 1e-4) pass = false;

    Mlp policy = Mlp::make({9, 8, 4}, rng);
    VectorXd pp(policy.param_count());
    for (Eigen::Index i = 0; i < pp.size(); ++i) pp(i) = 0.3 * rng.normal();
    policy.from_flat(pp.data());
    Mlp q1 = q, q2 = q;
    MatrixXd S(5, 9), eps(5, 2);
    for (int i = 0; i < 5; ++i) {
      for (int j = 0; j < 9; ++j) S(i, j) = rng.normal();
      for (int j = 0; j < 2; ++j) eps(i, j) = rng.normal();
    }
    MlpGrad gp(policy);
    gp.zero();
    sac_policy_loss(policy, q1, q2, 0.2, 0.8, S, eps, cfg, &gp);
    VectorXd ap(policy.param_count());
    gp.to_flat(ap.data());
    Mlp probe_p = policy;
    auto obj_p = [&](const VectorXd& p) {
      probe_p.from_flat(p.data());
      return sac_policy_loss(probe_p, q1, q2, 0.2, 0.8, S, eps, cfg, nullptr);
    };
    VectorXd pp0(policy.param_count());
    policy.to_flat(pp0.data());
    if (max_relative_error(ap, finite_difference_gradient(obj_p, pp0)) >= 1e-4) pass = false;
  }

  const double secs = seconds_since(t0);
  verdict(2, "gradient suite", pass && secs < 120.0, secs);
}

// ---------------------------------------------------------------------------
// Criterion 3: KL closed form versus Monte Carlo and exact anchor values.
void criterion_kl() {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;
  Rng rng(303);

  ContextPosterior q;
  q.mu = VectorXd(kContextDim);
  q.sigma = VectorXd(kContextDim);
  for (int i = 0; i < kContextDim; ++i) {
    q.mu(i) = rng.normal();
    q.sigma(i) = 0.3 + std::abs(rng.normal());
  }
  const double closed = q.kl_to_prior();
  const int n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (int t = 0; t < n; ++t) {
    const VectorXd c = q.sample(rng);
    double term = 0.0;
    for (int i = 0; i < kContextDim; ++i) {
      const double zq = (c(i) - q.mu(i)) / q.sigma(i);
      term += (-0.5 * zq * zq - std::log(q.sigma(i))) - (-0.5 * c(i) * c(i));
    }
    sum += term;
    sumsq += term * term;
  }
  const double mc = sum / n;
  const double se = std::sqrt((sumsq / n - mc * mc) / n);
  if (std::abs(closed - mc) >= 3.0 * se) pass = false;

  ContextPosterior std_q;
  std_q.mu = VectorXd::Zero(kContextDim);
  std_q.sigma = VectorXd::Ones(kContextDim);
  if (std_q.kl_to_prior() != 0.0) pass = false;

  VectorXd mu1 = VectorXd::Zero(kContextDim);
  mu1(0) = 1.0;
  if (kl_diag_gaussian_to_std(mu1, VectorXd::Ones(kContextDim)) != 0.5) pass = false;

  verdict(3, "KL and reparameterization", pass, seconds_since(t0));
}

// ---------------------------------------------------------------------------
// Criterion 4: Markov relaxation, zero violations over 100 random triples.
void criterion_markov() {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;
  Rng rng(404);
  for (int trial = 0; trial < 100; ++trial) {
    PriorModel m = random_prior(rng, Conditioning::ProprioContext, 3, 6);
    const Batch unsafe_b = random_batch(rng, 4, 3);
    const double eps_mc = 0.05 + 0.9 * rng.uniform();
    const auto [lhs, rhs] = markov_bound_check(m, unsafe_b, eps_mc, 8, rng);
    if (lhs > rhs) pass = false;
  }
  verdict(4, "Markov bound property", pass, seconds_since(t0));
}

// ---------------------------------------------------------------------------
// Staged experiment helpers.

const char* kOutDir = "acceptance_out";

std::string acceptance_config() {
  return std::string() +
         "[suite]\nn_train = 8\nn_eval = 3\nseed = 12\n"
         "[collect]\nsteps = 20000\nnoise = 0.4\nw = 16\n"
         "[prior]\nlambda = 0.22\nsteps = 4000\nlr = 3e-4\noptimizer = adam\n"
         "batch = 64\nhidden = 64\nseeds = 3\n"
         "variants = safer,parrot,contextual_parrot,safer_no_context,parrot_unsafe\n"
         "[assurance]\neps_targets = 1.0,0.85,0.70,0.55\neta0 = 1.5\nrollouts = 20\n"
         "[rl]\npipelines = safer,parrot,contextual_parrot,prior_explore,scratch\n"
         "env_steps = 20000\nseeds = 3\neps_target = 1.0\n"
         "[output]\ndir = " +
         kOutDir + "\n";
}

struct Staged {
  ExperimentConfig cfg;
  OfflineDataset dataset;
  DatasetView holdout_safe, holdout_unsafe, holdout, safe_train, unsafe_train;
  double collect_secs = 0.0, prior_secs = 0.0, bound_secs = 0.0;
  bool ok = false;
};

Staged stage_experiment(const std::string& cfg_path) {
  Staged st;
  st.cfg = load_config(cfg_path);
  auto timed = [&](const char* cmd, double& out_secs) {
    const auto t0 = std::chrono::steady_clock::now();
    const int rc = run_command(cmd, cfg_path, nullptr, nullptr);
    out_secs = seconds_since(t0);
    return rc == 0;
  };
  if (!timed("collect", st.collect_secs)) return st;
  if (!timed("train-prior", st.prior_secs)) return st;
  if (!timed("bound", st.bound_secs)) return st;

  st.dataset = load(dataset_path(st.cfg));
  const OfflineDataset& d = st.dataset;
  auto [train, holdout] = split_by_episode(d);
  st.holdout = holdout;
  auto [safe_all, unsafe_all] = partition(d);
  st.holdout_safe.ds = st.holdout_unsafe.ds = &d;
  st.safe_train.ds = st.unsafe_train.ds = &d;
  for (std::size_t i : safe_all.idx)
    (d.steps[i].episode_id % 5 == 4 ? st.holdout_safe : st.safe_train).idx.push_back(i);
  for (std::size_t i : unsafe_all.idx)
    (d.steps[i].episode_id % 5 == 4 ? st.holdout_unsafe : st.unsafe_train).idx.push_back(i);
  st.ok = true;
  return st;
}

double mean_logp_view(const PriorModel& m, const DatasetView& view) {
  double sum = 0.0;
  for (std::size_t i = 0; i < view.size(); ++i) {
    const LabeledStep& s = view[i];
    sum += m.flow.log_prob(s.action, m.cond_for(s.state, s.window));
  }
  return sum / static_cast<double>(view.size());
}

struct BoundsTable {
  std::vector<double> eps, eta;
  double eta_for(double e) const {
    for (std::size_t i = 0; i < eps.size(); ++i)
      if (std::abs(eps[i] - e) < 1e-9) return eta[i];
    throw std::runtime_error("no bound row");
  }
};

BoundsTable read_bounds(const std::string& path) {
  BoundsTable t;
  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    t.eps.push_back(std::stod(field));
    std::getline(ss, field, ',');
    t.eta.push_back(std::stod(field));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Criterion 5: held-out contrastive separation and likelihood audit.
void criterion_separation(const Staged& st) {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;
  int sep_ok = 0, audit_ok = 0;
  for (int s = 0; s < st.cfg.prior_seeds; ++s) {
    const PriorModel safer_m = load_prior(prior_path(st.cfg, "safer", s));
    const PriorModel parrot_m = load_prior(prior_path(st.cfg, "parrot", s));
    const double sep = mean_logp_view(safer_m, st.holdout_safe) -
                       mean_logp_view(safer_m, st.holdout_unsafe);
    if (sep >= 2.0) ++sep_ok;

    const auto rows =
        audit_models({{"safer", &safer_m}, {"parrot", &parrot_m}}, st.holdout);
    double safer_q90 = 1.0, parrot_q90 = 0.0;
    for (const AuditRow& r : rows) {
      if (r.quantile != 0.9) continue;
      if (r.model == "safer") safer_q90 = r.unsafe_fraction;
      if (r.model == "parrot") parrot_q90 = r.unsafe_fraction;
    }
    if (safer_q90 < parrot_q90) ++audit_ok;
    std::printf("  seed %d: separation %.2f nats, top-decile unsafe safer %.4f vs parrot "
                "%.4f\n",
                s, sep, safer_q90, parrot_q90);
  }
  if (2 * sep_ok <= st.cfg.prior_seeds) pass = false;
  if (2 * audit_ok <= st.cfg.prior_seeds) pass = false;
  const double secs = st.prior_secs + seconds_since(t0);
  verdict(5, "contrastive separation", pass && secs < 900.0, secs);
}

// ---------------------------------------------------------------------------
// Criterion 6: assurance calibration via the calibrate command.
void criterion_calibration(const std::string& cfg_path, const Staged& st) {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = run_command("calibrate", cfg_path, nullptr, nullptr) == 0;

  if (pass) {
    // key: (eps, task) -> fractions over seeds.
    std::map<std::pair<double, int>, std::vector<double>> cells;
    std::ifstream f((fs::path(kOutDir) / "calibration.csv").string());
    std::string line;
    std::getline(f, line);
    while (std::getline(f, line)) {
      if (line.empty()) continue;
      std::stringstream ss(line);
      std::string field;
      std::getline(ss, field, ',');
      const double eps = std::stod(field);
      std::getline(ss, field, ',');  // eta
      std::getline(ss, field, ',');
      const int task = std::stoi(field);
      std::getline(ss, field, ',');  // seed
      std::getline(ss, field, ',');
      cells[{eps, task}].push_back(std::stod(field));
    }
    if (cells.empty()) pass = false;
    for (const auto& [key, v] : cells) {
      const double mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
      const double slack = (1.0 - key.first) + 0.05;
      std::printf("  eps %.2f task %d: mean unsafe fraction %.4f (allowed %.4f)\n",
                  key.first, key.second, mean, slack);
      if (v.size() != 5 || mean > slack) pass = false;
    }
  }
  const double secs = seconds_since(t0);
  verdict(6, "assurance calibration", pass && secs < 600.0, secs);
}

// ---------------------------------------------------------------------------
// Criterion 7: downstream directional reproduction across all pipelines.
struct RlSummary {
  // per pipeline, per task: mean success and mean cumulative violations.
  std::map<std::string, std::map<int, double>> success, violations;
  std::vector<int> task_ids;
  bool ok = false;
};

RlSummary criterion_downstream(const std::string& cfg_path, const Staged& st) {
  const auto t0 = std::chrono::steady_clock::now();
  RlSummary out;
  bool pass = run_command("train-rl", cfg_path, nullptr, nullptr) == 0;

  const auto suite = make_task_suite(st.cfg.n_train, st.cfg.n_eval, st.cfg.suite_seed);
  for (auto it = suite.end() - st.cfg.n_eval; it != suite.end(); ++it)
    out.task_ids.push_back(it->task_id);

  if (pass) {
    for (const std::string& name : st.cfg.pipelines) {
      for (int task : out.task_ids) {
        double succ = 0.0, viol = 0.0;
        for (int s = 0; s < st.cfg.rl_seeds; ++s) {
          const MetricsLog log = read_metrics_csv(metrics_path(st.cfg, name, task, s));
          succ += log.success_rate_final_episodes();
          viol += double(log.cumulative_violations());
        }
        out.success[name][task] = succ / st.cfg.rl_seeds;
        out.violations[name][task] = viol / st.cfg.rl_seeds;
      }
    }
    int safer_lowest = 0, safer_succ = 0;
    for (int task : out.task_ids) {
      bool lowest = true;
      for (const std::string& name : st.cfg.pipelines)
        if (name != "safer" && out.violations[name][task] < out.violations["safer"][task])
          lowest = false;
      if (lowest) ++safer_lowest;
      if (out.success["safer"][task] >= out.success["parrot"][task]) ++safer_succ;
      std::printf("  task %d:", task);
      for (const std::string& name : st.cfg.pipelines)
        std::printf(" %s succ %.2f viol %.0f;", name.c_str(), out.success[name][task],
                    out.violations[name][task]);
      std::printf("\n");
    }
    double scratch_mean = 0.0;
    for (int task : out.task_ids) scratch_mean += out.success["scratch"][task];
    scratch_mean /= double(out.task_ids.size());
    if (safer_lowest < 2 || safer_succ < 2 || scratch_mean >= 0.05) pass = false;
  }
  const double secs = seconds_since(t0);
  verdict(7, "downstream directional reproduction", pass && secs < 3600.0, secs);
  out.ok = pass;
  return out;
}

// ---------------------------------------------------------------------------
// Criterion 8: ablation directionality.
void criterion_ablations(const Staged& st) {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;

  const auto suite = make_task_suite(st.cfg.n_train, st.cfg.n_eval, st.cfg.suite_seed);
  const std::vector<TaskSpec> eval(suite.end() - st.cfg.n_eval, suite.end());
  // Test the two eval tasks the full pipeline actually solves; on the
  // deepest task both variants fail and the comparison is vacuous.
  const std::vector<TaskSpec> tested(eval.end() - 2, eval.end());

  // Context ablation: the no-context prior runs the same downstream pipeline
  // with its own bound at the same target.
  for (const TaskSpec& task : tested) {
    int lower = 0;
    for (int s = 0; s < st.cfg.rl_seeds; ++s) {
      const PriorModel nc = load_prior(prior_path(st.cfg, "safer_no_context", s));
      const AssuranceBound b =
          compute_eta(nc, st.safe_train, st.unsafe_train, st.cfg.rl_eps_target, st.cfg.eta0);
      Pipeline p;
      p.kind = Pipeline::Kind::Safer;
      p.prior = &nc;
      p.eta = b.eta;
      const MetricsLog log =
          train_downstream(task, p, st.cfg.env_steps, std::uint64_t(s));
      const MetricsLog full =
          read_metrics_csv(metrics_path(st.cfg, "safer", task.task_id, s));
      const double nc_succ = log.success_rate_final_episodes();
      const double full_succ = full.success_rate_final_episodes();
      std::printf("  task %d seed %d: no-context succ %.2f vs full %.2f\n", task.task_id, s,
                  nc_succ, full_succ);
      if (nc_succ < full_succ) ++lower;
    }
    if (2 * lower <= st.cfg.rl_seeds) pass = false;
  }

  // Data ablation: a prior trained with unsafe pairs admits more violations
  // when rolled out with unconstrained latents on the tasks where the unsafe
  // pairs were collected.
  AssuranceBound wide;
  wide.eta = 3.0;
  const std::vector<TaskSpec> train_tasks(suite.begin(), suite.end() - st.cfg.n_eval);
  int data_ok = 0;
  for (int s = 0; s < st.cfg.prior_seeds; ++s) {
    const PriorModel safe_p = load_prior(prior_path(st.cfg, "parrot", s));
    const PriorModel unsafe_p = load_prior(prior_path(st.cfg, "parrot_unsafe", s));
    double safe_frac = 0.0, unsafe_frac = 0.0;
    for (std::size_t ti = 0; ti < train_tasks.size(); ++ti) {
      Rng r1(Rng::mix(0x7777, std::uint64_t(s) * 131 + ti));
      Rng r2(Rng::mix(0x7777, std::uint64_t(s) * 131 + ti));
      safe_frac += empirical_unsafe_fraction(wide, safe_p, train_tasks[ti], 50, r1);
      unsafe_frac += empirical_unsafe_fraction(wide, unsafe_p, train_tasks[ti], 50, r2);
    }
    safe_frac /= double(train_tasks.size());
    unsafe_frac /= double(train_tasks.size());
    std::printf("  seed %d: per-step violations parrot %.5f vs parrot+unsafe %.5f\n", s,
                safe_frac, unsafe_frac);
    if (unsafe_frac > safe_frac) ++data_ok;
  }
  if (2 * data_ok <= st.cfg.prior_seeds) pass = false;

  verdict(8, "ablation directionality", pass, seconds_since(t0));
}

// ---------------------------------------------------------------------------
// Criterion 9: eta/success tradeoff is not monotone.
void criterion_tradeoff(const Staged& st) {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;

  const BoundsTable bounds = read_bounds(bounds_path(st.cfg));
  if (bounds.eps.size() < 4) pass = false;

  const auto suite = make_task_suite(st.cfg.n_train, st.cfg.n_eval, st.cfg.suite_seed);
  const TaskSpec task = suite[suite.size() - std::size_t(st.cfg.n_eval)];
  const PriorModel prior = load_prior(prior_path(st.cfg, "safer", 0));

  std::map<double, double> succ_by_eta;  // distinct eta values only
  for (double eta : bounds.eta) {
    if (succ_by_eta.count(eta)) continue;
    Pipeline p;
    p.kind = Pipeline::Kind::Safer;
    p.prior = &prior;
    p.eta = eta;
    const MetricsLog log = train_downstream(task, p, st.cfg.env_steps, 0);
    succ_by_eta[eta] = log.success_rate_final_episodes();
    std::printf("  eta %.4f: success %.2f\n", eta, succ_by_eta[eta]);
  }
  const double smallest_eta = *std::min_element(bounds.eta.begin(), bounds.eta.end());
  const double mid_eta = bounds.eta_for(0.85);
  if (!(succ_by_eta[smallest_eta] < succ_by_eta[mid_eta])) pass = false;

  verdict(9, "eta tradeoff sweep", pass, seconds_since(t0));
}

// ---------------------------------------------------------------------------
// Criterion 10: bit-identical reruns for every command.
void criterion_determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  bool pass = true;

  const std::string dir = "acceptance_tiny";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cfg_path = (fs::path(dir) / "cfg.ini").string();
  {
    std::ofstream f(cfg_path);
    f << "[suite]\nn_train = 2\nn_eval = 1\nseed = 0\n"
         "[collect]\nsteps = 2000\nnoise = 0.3\nw = 4\n"
         "[prior]\nlambda = 0.1\nsteps = 60\nlr = 1e-4\noptimizer = sgd_momentum\n"
         "batch = 32\nhidden = 8\nseeds = 1\nvariants = safer,parrot\n"
         "[assurance]\neps_targets = 1.0,0.85,0.70,0.55\neta0 = 3.0\nrollouts = 2\n"
         "[rl]\npipelines = safer,scratch\nenv_steps = 400\nseeds = 1\neps_target = 0.85\n"
         "[output]\ndir = "
      << dir << "/out\n";
  }
  const char* commands[] = {"collect", "train-prior", "bound", "train-rl",
                            "audit",   "calibrate",   "tradeoff", "report"};

  auto run_all = [&]() {
    for (const char* c : commands)
      if (run_command(c, cfg_path, nullptr, nullptr) != 0) return false;
    return true;
  };
  auto snapshot = [&]() {
    std::map<std::string, std::string> hashes;
    for (const auto& e : fs::recursive_directory_iterator(dir + "/out"))
      if (e.is_regular_file())
        hashes[e.path().string()] = hash_hex(fnv1a_file(e.path().string()));
    return hashes;
  };

  if (!run_all()) pass = false;
  const auto first = snapshot();
  if (!run_all()) pass = false;
  const auto second = snapshot();
  if (first.empty() || first != second) pass = false;

  fs::remove_all(dir);
  verdict(10, "determinism", pass, seconds_since(t0));
}

}  // namespace

int main() {
  std::printf("acceptance gate\n");
  criterion_flow();
  criterion_gradients();
  criterion_kl();
  criterion_markov();

  fs::remove_all(kOutDir);
  fs::create_directories(kOutDir);
  const std::string cfg_path = (fs::path(kOutDir) / "cfg.ini").string();
  {
    std::ofstream f(cfg_path);
    f << acceptance_config();
  }
  const Staged st = stage_experiment(cfg_path);
  if (!st.ok) {
    std::printf("staging failed; criteria 5-9 cannot run\n");
    for (int k = 5; k <= 9; ++k) verdict(k, "staging failed", false, 0.0);
  } else {
    criterion_separation(st);
    criterion_calibration(cfg_path, st);
    criterion_downstream(cfg_path, st);
    criterion_ablations(st);
    criterion_tradeoff(st);
  }
  criterion_determinism();

  std::printf("%d criterion(s) failed\n", g_failures);
  return g_failures == 0 ? 0 : 1;
}
