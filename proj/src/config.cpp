#include "safer/config.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace safer {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos;
    int x = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("bad integer for " + key + ": '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("bad number for " + key + ": '" + v + "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t pos;
    unsigned long long x = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return static_cast<std::uint64_t>(x);
  } catch (const std::exception&) {
    throw ConfigError("bad seed for " + key + ": '" + v + "'");
  }
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file: " + path);

  ExperimentConfig cfg;
  std::string line, section;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("malformed section header at line " + std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected key = value at line " + std::to_string(lineno));
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    const std::string full = section + "." + key;

    if (full == "suite.n_train") cfg.n_train = parse_int(full, val);
    else if (full == "suite.n_eval") cfg.n_eval = parse_int(full, val);
    else if (full == "suite.seed") cfg.suite_seed = parse_u64(full, val);
    else if (full == "collect.steps") cfg.collect_steps = parse_int(full, val);
    else if (full == "collect.noise") cfg.collect_noise = parse_double(full, val);
    else if (full == "collect.w") cfg.w = parse_int(full, val);
    else if (full == "prior.lambda") cfg.lambda = parse_double(full, val);
    else if (full == "prior.steps") cfg.prior_steps = parse_int(full, val);
    else if (full == "prior.lr") cfg.lr = parse_double(full, val);
    else if (full == "prior.optimizer") cfg.optimizer = val;
    else if (full == "prior.batch") cfg.prior_batch = parse_int(full, val);
    else if (full == "prior.hidden") cfg.hidden = parse_int(full, val);
    else if (full == "prior.seeds") cfg.prior_seeds = parse_int(full, val);
    else if (full == "prior.variants") cfg.variants = split_list(val);
    else if (full == "assurance.eps_targets") {
      cfg.eps_targets.clear();
      for (const auto& item : split_list(val))
        cfg.eps_targets.push_back(parse_double(full, item));
    } else if (full == "assurance.eta0") cfg.eta0 = parse_double(full, val);
    else if (full == "assurance.rollouts") cfg.assurance_rollouts = parse_int(full, val);
    else if (full == "rl.pipelines") cfg.pipelines = split_list(val);
    else if (full == "rl.env_steps") cfg.env_steps = parse_int(full, val);
    else if (full == "rl.seeds") cfg.rl_seeds = parse_int(full, val);
    else if (full == "rl.eps_target") cfg.rl_eps_target = parse_double(full, val);
    else if (full == "output.dir") cfg.out_dir = val;
    else throw ConfigError("unknown config key: " + full);
  }

  require(cfg.n_train > 0, "suite.n_train must be positive");
  require(cfg.n_eval > 0, "suite.n_eval must be positive");
  require(cfg.collect_steps > 0, "collect.steps must be positive");
  require(cfg.collect_noise >= 0.0, "collect.noise must be non-negative");
  require(cfg.w > 0, "collect.w must be positive");
  require(cfg.lambda >= 0.0, "prior.lambda must be non-negative");
  require(cfg.prior_steps > 0, "prior.steps must be positive");
  require(cfg.lr > 0.0, "prior.lr must be positive");
  require(cfg.optimizer == "sgd_momentum" || cfg.optimizer == "adam",
          "prior.optimizer must be sgd_momentum or adam");
  require(cfg.prior_batch > 0, "prior.batch must be positive");
  require(cfg.hidden > 0, "prior.hidden must be positive");
  require(cfg.prior_seeds > 0, "prior.seeds must be positive");
  require(!cfg.variants.empty(), "prior.variants must not be empty");
  for (const auto& v : cfg.variants)
    require(v == "safer" || v == "parrot" || v == "contextual_parrot" ||
                v == "safer_no_context" || v == "parrot_unsafe",
            "unknown prior variant: " + v);
  require(!cfg.eps_targets.empty(), "assurance.eps_targets must not be empty");
  for (double e : cfg.eps_targets)
    require(e > 0.0 && e <= 1.0, "assurance.eps_targets entries must be in (0, 1]");
  require(cfg.eta0 > 0.0, "assurance.eta0 must be positive");
  require(cfg.assurance_rollouts > 0, "assurance.rollouts must be positive");
  require(!cfg.pipelines.empty(), "rl.pipelines must not be empty");
  for (const auto& p : cfg.pipelines)
    require(p == "safer" || p == "parrot" || p == "contextual_parrot" ||
                p == "prior_explore" || p == "scratch",
            "unknown pipeline: " + p);
  require(cfg.env_steps > 0, "rl.env_steps must be positive");
  require(cfg.rl_seeds > 0, "rl.seeds must be positive");
  require(cfg.rl_eps_target > 0.0 && cfg.rl_eps_target <= 1.0,
          "rl.eps_target must be in (0, 1]");
  require(!cfg.out_dir.empty(), "output.dir must not be empty");
  return cfg;
}

}  // namespace safer
