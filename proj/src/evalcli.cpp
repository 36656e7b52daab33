#include "safer/evalcli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "safer/assurance.hpp"
#include "safer/checkpoint.hpp"
#include "safer/rl.hpp"

namespace fs = std::filesystem;

namespace safer {

std::uint64_t fnv1a_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingArtifact("missing upstream artifact: " + path);
  std::uint64_t h = 14695981039346656037ull;
  char buf[1 << 14];
  while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
    const std::streamsize n = f.gcount();
    for (std::streamsize i = 0; i < n; ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 1099511628211ull;
    }
    if (!f) break;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_manifest(const Manifest& m, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path);
  for (const auto& [k, v] : m) f << k << '=' << v << '\n';
}

Manifest read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifact("missing upstream artifact: " + path);
  Manifest m;
  std::string line;
  while (std::getline(f, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return m;
}

namespace {

std::string join(const std::string& dir, const std::string& name) {
  return (fs::path(dir) / name).string();
}

// Downstream commands check the files they consume against the hash the
// producing command recorded, so silent edits surface as "stale input".
void check_fresh(const Manifest& upstream, const std::string& file_key,
                 const std::string& path) {
  const auto it = upstream.find(file_key);
  if (it == upstream.end()) return;
  if (it->second != hash_hex(fnv1a_file(path)))
    throw MissingArtifact("stale input: " + path);
}

OfflineDataset load_dataset(const ExperimentConfig& cfg) {
  const std::string path = dataset_path(cfg);
  if (!fs::exists(path)) throw MissingArtifact("missing upstream artifact: " + path);
  return load(path);
}

PriorModel load_prior_checked(const ExperimentConfig& cfg, const std::string& variant,
                              int seed) {
  const std::string path = prior_path(cfg, variant, seed);
  if (!fs::exists(path)) throw MissingArtifact("missing upstream artifact: " + path);
  return load_prior(path);
}

// Safe/unsafe partitions restricted to the training side of the episode
// split, so holdout episodes never reach any training loop.
struct TrainViews {
  DatasetView train, holdout, safe_train, unsafe_train;
};

TrainViews make_views(const OfflineDataset& d) {
  TrainViews v;
  std::tie(v.train, v.holdout) = split_by_episode(d);
  auto [safe_all, unsafe_all] = partition(d);
  v.safe_train.ds = v.unsafe_train.ds = &d;
  auto keep = [&](const DatasetView& part, DatasetView& out) {
    for (std::size_t i : part.idx)
      if (d.steps[i].episode_id % 5 != 4) out.idx.push_back(i);
  };
  keep(safe_all, v.safe_train);
  keep(unsafe_all, v.unsafe_train);
  return v;
}

SaferConfig prior_config(const ExperimentConfig& cfg, std::uint64_t seed) {
  SaferConfig pc;
  pc.lambda = cfg.lambda;
  pc.steps = cfg.prior_steps;
  pc.batch = cfg.prior_batch;
  pc.lr = cfg.lr;
  pc.optimizer = opt_kind_from_string(cfg.optimizer);
  pc.hidden = cfg.hidden;
  pc.seed = seed;
  return pc;
}

std::vector<TaskSpec> eval_tasks(const ExperimentConfig& cfg,
                                 const std::vector<TaskSpec>& suite) {
  return {suite.end() - cfg.n_eval, suite.end()};
}

struct BoundRow {
  double eps_target = 0.0;
  double eta = 0.0;
  int iterations = 0;
  bool converged = false;
};

void write_bounds_csv(const std::vector<BoundRow>& rows, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path);
  f.precision(17);
  f << "eps_target,eta,iterations,converged\n";
  for (const auto& r : rows)
    f << r.eps_target << ',' << r.eta << ',' << r.iterations << ',' << (r.converged ? 1 : 0)
      << '\n';
}

std::vector<BoundRow> read_bounds_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingArtifact("missing upstream artifact: " + path);
  std::vector<BoundRow> rows;
  std::string line;
  std::getline(f, line);
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    BoundRow r;
    std::getline(ss, field, ',');
    r.eps_target = std::stod(field);
    std::getline(ss, field, ',');
    r.eta = std::stod(field);
    std::getline(ss, field, ',');
    r.iterations = std::stoi(field);
    std::getline(ss, field, ',');
    r.converged = std::stoi(field) != 0;
    rows.push_back(r);
  }
  return rows;
}

double eta_for(const std::vector<BoundRow>& rows, double eps_target) {
  for (const auto& r : rows)
    if (std::abs(r.eps_target - eps_target) < 1e-12) return r.eta;
  throw MissingArtifact("missing upstream artifact: no bound for eps_target " +
                        std::to_string(eps_target));
}

TrainResult train_variant(const std::string& variant, const OfflineDataset& d,
                          const TrainViews& views, const SaferConfig& pc) {
  if (variant == "safer")
    return train_safer(views.safe_train, views.unsafe_train, pc,
                       Conditioning::ProprioContext);
  if (variant == "safer_no_context")
    return train_safer(views.safe_train, views.unsafe_train, pc, Conditioning::ProprioOnly);
  if (variant == "parrot") return train_parrot(views.train, pc, false, false);
  if (variant == "contextual_parrot") return train_parrot(views.train, pc, true, false);
  if (variant == "parrot_unsafe") return train_parrot(views.train, pc, false, true);
  throw ConfigError("unknown prior variant: " + variant);
}

// The RL pipelines reuse the offline priors: safer acts through the SAFER
// prior inside its bound, parrot/contextual through their max-likelihood
// priors, prior-explore mixes raw actions with PARROT prior samples.
std::string prior_variant_for_pipeline(Pipeline::Kind k) {
  switch (k) {
    case Pipeline::Kind::Safer: return "safer";
    case Pipeline::Kind::Parrot: return "parrot";
    case Pipeline::Kind::ContextualParrot: return "contextual_parrot";
    case Pipeline::Kind::PriorExplore: return "safer";
    case Pipeline::Kind::Scratch: return "";
  }
  return "";
}

}  // namespace

std::string dataset_path(const ExperimentConfig& cfg) {
  return join(cfg.out_dir, "dataset.sfrd");
}

std::string prior_path(const ExperimentConfig& cfg, const std::string& variant, int seed) {
  return join(cfg.out_dir, "prior_" + variant + "_seed" + std::to_string(seed) + ".sfrp");
}

std::string bounds_path(const ExperimentConfig& cfg) {
  return join(cfg.out_dir, "bounds.csv");
}

std::string metrics_path(const ExperimentConfig& cfg, const std::string& pipeline,
                         int task_id, int seed) {
  return join(cfg.out_dir, "metrics_" + pipeline + "_task" + std::to_string(task_id) +
                               "_seed" + std::to_string(seed) + ".csv");
}

std::vector<AuditRow> audit_models(
    const std::vector<std::pair<std::string, const PriorModel*>>& models,
    const DatasetView& holdout) {
  if (holdout.size() == 0) throw std::runtime_error("empty holdout");
  std::vector<AuditRow> out;
  const double quantiles[] = {0.5, 0.75, 0.9};
  for (const auto& [name, model] : models) {
    const std::size_t n = holdout.size();
    MatrixXd A(n, 2), Cond(n, model->cond_dim());
    for (std::size_t i = 0; i < n; ++i) {
      const LabeledStep& s = holdout[i];
      A.row(i) = s.action.transpose();
      Cond.row(i) = model->cond_for(s.state, s.window).transpose();
    }
    const VectorXd logp = model->flow.log_prob_batch(A, Cond);
    std::vector<double> sorted(logp.data(), logp.data() + logp.size());
    std::sort(sorted.begin(), sorted.end());
    for (double q : quantiles) {
      const auto k = static_cast<std::size_t>(q * static_cast<double>(n - 1));
      const double threshold = sorted[k];
      long above = 0, unsafe_above = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (logp(static_cast<Eigen::Index>(i)) < threshold) continue;
        ++above;
        unsafe_above += holdout[i].violation;
      }
      out.push_back({name, q, static_cast<double>(unsafe_above) /
                                  static_cast<double>(std::max(1l, above))});
    }
  }
  return out;
}

void cmd_collect(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const auto suite = make_task_suite(cfg.n_train, cfg.n_eval, cfg.suite_seed);
  const std::vector<TaskSpec> train_tasks(suite.begin(), suite.end() - cfg.n_eval);
  OfflineDataset d = collect(train_tasks, static_cast<std::size_t>(cfg.collect_steps),
                             cfg.collect_noise, cfg.w, cfg.suite_seed);
  const std::string out = dataset_path(cfg);
  save(d, out);
  Manifest m;
  m["command"] = "collect";
  m["seed"] = std::to_string(cfg.suite_seed);
  m["output:" + out] = hash_hex(fnv1a_file(out));
  write_manifest(m, join(cfg.out_dir, "collect.manifest"));
}

void cmd_train_prior(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const OfflineDataset d = load_dataset(cfg);
  const Manifest upstream = read_manifest(join(cfg.out_dir, "collect.manifest"));
  check_fresh(upstream, "output:" + dataset_path(cfg), dataset_path(cfg));
  const TrainViews views = make_views(d);

  Manifest m;
  m["command"] = "train-prior";
  m["input:" + dataset_path(cfg)] = hash_hex(fnv1a_file(dataset_path(cfg)));
  for (const std::string& variant : cfg.variants) {
    for (int s = 0; s < cfg.prior_seeds; ++s) {
      const SaferConfig pc = prior_config(cfg, static_cast<std::uint64_t>(s));
      TrainResult res = train_variant(variant, d, views, pc);
      const std::string ckpt = prior_path(cfg, variant, s);
      save_prior(res.model, ckpt);
      const std::string log_path =
          join(cfg.out_dir, "trainlog_" + variant + "_seed" + std::to_string(s) + ".csv");
      write_training_log_csv(res.log, log_path);
      m["output:" + ckpt] = hash_hex(fnv1a_file(ckpt));
      m["output:" + log_path] = hash_hex(fnv1a_file(log_path));
    }
  }
  write_manifest(m, join(cfg.out_dir, "train-prior.manifest"));
}

void cmd_bound(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const OfflineDataset d = load_dataset(cfg);
  const Manifest upstream = read_manifest(join(cfg.out_dir, "train-prior.manifest"));
  const std::string ckpt = prior_path(cfg, "safer", 0);
  check_fresh(upstream, "output:" + ckpt, ckpt);
  const PriorModel model = load_prior_checked(cfg, "safer", 0);
  const TrainViews views = make_views(d);

  std::vector<BoundRow> rows;
  for (double eps : cfg.eps_targets) {
    const AssuranceBound b =
        compute_eta(model, views.safe_train, views.unsafe_train, eps, cfg.eta0);
    rows.push_back({b.eps_target, b.eta, b.iterations, b.converged});
  }
  const std::string out = bounds_path(cfg);
  write_bounds_csv(rows, out);
  Manifest m;
  m["command"] = "bound";
  m["input:" + dataset_path(cfg)] = hash_hex(fnv1a_file(dataset_path(cfg)));
  m["input:" + ckpt] = hash_hex(fnv1a_file(ckpt));
  m["output:" + out] = hash_hex(fnv1a_file(out));
  write_manifest(m, join(cfg.out_dir, "bound.manifest"));
}

void cmd_train_rl(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const auto suite = make_task_suite(cfg.n_train, cfg.n_eval, cfg.suite_seed);
  const auto tasks = eval_tasks(cfg, suite);

  Manifest m;
  m["command"] = "train-rl";
  for (const std::string& name : cfg.pipelines) {
    const Pipeline::Kind kind = pipeline_kind_from_string(name);
    const std::string variant = prior_variant_for_pipeline(kind);
    for (int s = 0; s < cfg.rl_seeds; ++s) {
      PriorModel prior;
      Pipeline p;
      p.kind = kind;
      if (!variant.empty()) {
        const int prior_seed = s % cfg.prior_seeds;
        prior = load_prior_checked(cfg, variant, prior_seed);
        p.prior = &prior;
        m["input:" + prior_path(cfg, variant, prior_seed)] =
            hash_hex(fnv1a_file(prior_path(cfg, variant, prior_seed)));
      }
      if (kind == Pipeline::Kind::Safer) {
        const auto bounds = read_bounds_csv(bounds_path(cfg));
        p.eta = eta_for(bounds, cfg.rl_eps_target);
        m["input:" + bounds_path(cfg)] = hash_hex(fnv1a_file(bounds_path(cfg)));
      }
      for (const TaskSpec& task : tasks) {
        MetricsLog log =
            train_downstream(task, p, cfg.env_steps, static_cast<std::uint64_t>(s));
        log.pipeline = name;
        log.task_id = task.task_id;
        log.seed = static_cast<std::uint64_t>(s);
        const std::string out = metrics_path(cfg, name, task.task_id, s);
        write_metrics_csv(log, out);
        m["output:" + out] = hash_hex(fnv1a_file(out));
      }
    }
  }
  write_manifest(m, join(cfg.out_dir, "train-rl.manifest"));
}

void cmd_audit(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const OfflineDataset d = load_dataset(cfg);
  const TrainViews views = make_views(d);
  const PriorModel safer_model = load_prior_checked(cfg, "safer", 0);
  const PriorModel parrot_model = load_prior_checked(cfg, "parrot", 0);
  const auto rows = audit_models(
      {{"safer", &safer_model}, {"parrot", &parrot_model}}, views.holdout);
  const std::string out = join(cfg.out_dir, "audit.csv");
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + out);
  f.precision(17);
  f << "model,quantile,unsafe_fraction\n";
  for (const auto& r : rows) f << r.model << ',' << r.quantile << ',' << r.unsafe_fraction << '\n';
  f.close();
  Manifest m;
  m["command"] = "audit";
  m["input:" + dataset_path(cfg)] = hash_hex(fnv1a_file(dataset_path(cfg)));
  m["input:" + prior_path(cfg, "safer", 0)] = hash_hex(fnv1a_file(prior_path(cfg, "safer", 0)));
  m["input:" + prior_path(cfg, "parrot", 0)] =
      hash_hex(fnv1a_file(prior_path(cfg, "parrot", 0)));
  m["output:" + out] = hash_hex(fnv1a_file(out));
  write_manifest(m, join(cfg.out_dir, "audit.manifest"));
}

void calibration_sweep(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const PriorModel model = load_prior_checked(cfg, "safer", 0);
  const auto bounds = read_bounds_csv(bounds_path(cfg));
  const auto suite = make_task_suite(cfg.n_train, cfg.n_eval, cfg.suite_seed);
  const auto tasks = eval_tasks(cfg, suite);

  const std::string out = join(cfg.out_dir, "calibration.csv");
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + out);
  f.precision(17);
  f << "eps_target,eta,task_id,seed,empirical_unsafe_fraction,within_slack\n";
  for (const auto& b : bounds) {
    AssuranceBound bound;
    bound.eta = b.eta;
    bound.eps_target = b.eps_target;
    for (const TaskSpec& task : tasks) {
      for (int s = 0; s < 5; ++s) {
        const std::uint64_t run_id =
            static_cast<std::uint64_t>(task.task_id) * 131 + static_cast<std::uint64_t>(s) +
            static_cast<std::uint64_t>(b.eps_target * 10007.0) * 65537;
        Rng rng(Rng::mix(cfg.suite_seed, Rng::mix(0xca11b, run_id)));
        const double frac =
            empirical_unsafe_fraction(bound, model, task, cfg.assurance_rollouts, rng);
        const int ok = frac <= (1.0 - b.eps_target) + 0.05 ? 1 : 0;
        f << b.eps_target << ',' << b.eta << ',' << task.task_id << ',' << s << ',' << frac
          << ',' << ok << '\n';
      }
    }
  }
  f.close();
  Manifest m;
  m["command"] = "calibrate";
  m["input:" + prior_path(cfg, "safer", 0)] = hash_hex(fnv1a_file(prior_path(cfg, "safer", 0)));
  m["input:" + bounds_path(cfg)] = hash_hex(fnv1a_file(bounds_path(cfg)));
  m["output:" + out] = hash_hex(fnv1a_file(out));
  write_manifest(m, join(cfg.out_dir, "calibrate.manifest"));
}

void tradeoff_sweep(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  const auto bounds = read_bounds_csv(bounds_path(cfg));
  if (bounds.size() < 4)
    throw MissingArtifact("missing upstream artifact: need bounds for at least 4 targets");
  const auto suite = make_task_suite(cfg.n_train, cfg.n_eval, cfg.suite_seed);
  const auto tasks = eval_tasks(cfg, suite);

  const std::string out = join(cfg.out_dir, "tradeoff.csv");
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + out);
  f.precision(17);
  f << "eta,eps_target,task_id,seed,success_rate,cum_violations\n";
  Manifest m;
  m["command"] = "tradeoff";
  m["input:" + bounds_path(cfg)] = hash_hex(fnv1a_file(bounds_path(cfg)));
  for (const auto& b : bounds) {
    PriorModel prior = load_prior_checked(cfg, "safer", 0);
    Pipeline p;
    p.kind = Pipeline::Kind::Safer;
    p.prior = &prior;
    p.eta = b.eta;
    for (const TaskSpec& task : tasks) {
      for (int s = 0; s < cfg.rl_seeds; ++s) {
        const MetricsLog log =
            train_downstream(task, p, cfg.env_steps, static_cast<std::uint64_t>(s));
        f << b.eta << ',' << b.eps_target << ',' << task.task_id << ',' << s << ','
          << log.success_rate_final_episodes() << ',' << log.cumulative_violations() << '\n';
      }
    }
  }
  f.close();
  m["input:" + prior_path(cfg, "safer", 0)] = hash_hex(fnv1a_file(prior_path(cfg, "safer", 0)));
  m["output:" + out] = hash_hex(fnv1a_file(out));
  write_manifest(m, join(cfg.out_dir, "tradeoff.manifest"));
}

void report(const ExperimentConfig& cfg) {
  const auto suite = make_task_suite(cfg.n_train, cfg.n_eval, cfg.suite_seed);
  const auto tasks = eval_tasks(cfg, suite);

  const std::string summary_path = join(cfg.out_dir, "report.csv");
  const std::string curves_path = join(cfg.out_dir, "violation_curves.csv");
  std::ofstream fs_(summary_path, std::ios::trunc);
  std::ofstream fc(curves_path, std::ios::trunc);
  if (!fs_ || !fc) throw std::runtime_error("cannot open report outputs");
  fs_.precision(17);
  fc.precision(17);
  fs_ << "pipeline,task_id,mean_success_rate,sd_success_rate,mean_cum_violations\n";
  fc << "pipeline,task_id,seed,step_bucket,bucket_violations,cumulative_violations\n";

  Manifest m;
  m["command"] = "report";
  for (const std::string& name : cfg.pipelines) {
    for (const TaskSpec& task : tasks) {
      std::vector<double> succ;
      std::vector<long> cum;
      for (int s = 0; s < cfg.rl_seeds; ++s) {
        const std::string path = metrics_path(cfg, name, task.task_id, s);
        if (!fs::exists(path)) throw MissingArtifact("missing upstream artifact: " + path);
        m["input:" + path] = hash_hex(fnv1a_file(path));
        const MetricsLog log = read_metrics_csv(path);
        succ.push_back(log.success_rate_final_episodes());
        cum.push_back(log.cumulative_violations());

        long running = 0, bucket = 0;
        int next_edge = 1000;
        for (const MetricsRow& r : log.rows) {
          running += r.violation;
          bucket += r.violation;
          if (r.step + 1 >= next_edge) {
            fc << name << ',' << task.task_id << ',' << s << ',' << next_edge << ','
               << bucket << ',' << running << '\n';
            bucket = 0;
            next_edge += 1000;
          }
        }
      }
      const double n = static_cast<double>(succ.size());
      double mean = 0.0;
      for (double v : succ) mean += v;
      mean /= n;
      double var = 0.0;
      for (double v : succ) var += (v - mean) * (v - mean);
      const double sd = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
      double mean_cum = 0.0;
      for (long v : cum) mean_cum += static_cast<double>(v);
      mean_cum /= n;
      fs_ << name << ',' << task.task_id << ',' << mean << ',' << sd << ',' << mean_cum
          << '\n';
    }
  }
  fs_.close();
  fc.close();
  m["output:" + summary_path] = hash_hex(fnv1a_file(summary_path));
  m["output:" + curves_path] = hash_hex(fnv1a_file(curves_path));
  write_manifest(m, join(cfg.out_dir, "report.manifest"));
}

int run_command(const std::string& command, const std::string& config_path,
                const std::uint64_t* seed_override, const std::string* out_override) {
  try {
    ExperimentConfig cfg = load_config(config_path);
    if (seed_override) cfg.suite_seed = *seed_override;
    if (out_override) cfg.out_dir = *out_override;
    if (command == "collect") cmd_collect(cfg);
    else if (command == "train-prior") cmd_train_prior(cfg);
    else if (command == "bound") cmd_bound(cfg);
    else if (command == "train-rl") cmd_train_rl(cfg);
    else if (command == "audit") cmd_audit(cfg);
    else if (command == "calibrate") calibration_sweep(cfg);
    else if (command == "tradeoff") tradeoff_sweep(cfg);
    else if (command == "report") report(cfg);
    else throw ConfigError("unknown command: " + command);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const MissingArtifact& e) {
    std::cerr << "artifact error: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace safer
