#include "safer/assurance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace safer {

VectorXd latent_of(const PriorModel& model, const LabeledStep& step) {
  const VectorXd cond = model.cond_for(step.state, step.window);
  auto [z, log_det] = model.flow.inverse(step.action, cond);
  if (!all_finite(z)) throw std::runtime_error("latent_of: non-finite latent");
  return z;
}

MatrixXd latents_of(const PriorModel& model, const DatasetView& view) {
  const auto n = static_cast<Eigen::Index>(view.size());
  std::vector<std::size_t> rows(view.size());
  std::iota(rows.begin(), rows.end(), 0);
  const Batch b = gather_batch(view, rows);
  MatrixXd cond;
  if (model.conditioning == Conditioning::ProprioContext) {
    MatrixXd mu, sigma;
    model.encoder->posterior_batch(b.windows, mu, sigma);
    cond.resize(n, kProprioDim + kContextDim);
    cond.leftCols(kProprioDim) = b.states.leftCols(kProprioDim);
    cond.rightCols(kContextDim) = mu;  // mean context
  } else if (model.conditioning == Conditioning::FullState) {
    cond = b.states;
  } else {
    cond = b.states.leftCols(kProprioDim);
  }
  auto [z, log_det] = model.flow.inverse_batch(b.actions, cond);
  return z;
}

AssuranceBound compute_eta_from_latents(const MatrixXd& z_safe, const MatrixXd& z_unsafe,
                                        double eps_target, double eta0) {
  if (eps_target <= 0.0 || eps_target > 1.0)
    throw std::invalid_argument("compute_eta: eps_target must be in (0,1]");
  VectorXd safe_max = z_safe.cwiseAbs().rowwise().maxCoeff();
  VectorXd unsafe_max(0);
  if (z_unsafe.rows() > 0) unsafe_max = z_unsafe.cwiseAbs().rowwise().maxCoeff();

  std::vector<double> s_sorted(safe_max.data(), safe_max.data() + safe_max.size());
  std::vector<double> u_sorted(unsafe_max.data(), unsafe_max.data() + unsafe_max.size());
  std::sort(s_sorted.begin(), s_sorted.end());
  std::sort(u_sorted.begin(), u_sorted.end());

  if (s_sorted.empty() || s_sorted.front() > eta0)
    throw std::runtime_error("no safe latents in initial bound");

  // Gradient-free contraction: walk the candidate bounds (the observed
  // max-components) downward from eta0 and stop at the largest one whose
  // in-bound composition is at least eps_target safe. Membership is closed
  // (max component <= eta).
  auto count_le = [](const std::vector<double>& v, double x) {
    return static_cast<double>(std::upper_bound(v.begin(), v.end(), x) - v.begin());
  };

  std::vector<double> candidates;
  candidates.reserve(s_sorted.size() + u_sorted.size() + 1);
  for (double v : s_sorted)
    if (v <= eta0) candidates.push_back(v);
  for (double v : u_sorted)
    if (v <= eta0) candidates.push_back(v);
  candidates.push_back(eta0);
  std::sort(candidates.begin(), candidates.end(), std::greater<>());

  AssuranceBound bound;
  bound.eps_target = eps_target;
  bound.eta = s_sorted.front();
  for (double eta : candidates) {
    ++bound.iterations;
    const double ns = count_le(s_sorted, eta);
    const double nu = count_le(u_sorted, eta);
    if (ns < 1.0) break;  // candidates only shrink from here
    if (ns >= eps_target * (ns + nu)) {
      bound.eta = eta;
      bound.converged = true;
      break;
    }
  }
  return bound;
}

AssuranceBound compute_eta(const PriorModel& model, const DatasetView& d_safe,
                           const DatasetView& d_unsafe, double eps_target, double eta0) {
  const MatrixXd z_safe = latents_of(model, d_safe);
  const MatrixXd z_unsafe =
      d_unsafe.size() > 0 ? latents_of(model, d_unsafe) : MatrixXd(0, model.flow.cfg.action_dim);
  return compute_eta_from_latents(z_safe, z_unsafe, eps_target, eta0);
}

namespace {

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Acklam's rational approximation of the standard normal quantile.
double norm_quantile(double p) {
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
           ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  if (p > 1.0 - plow) return -norm_quantile(1.0 - p);
  const double q = p - 0.5;
  const double r = q * q;
  return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
         (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

}  // namespace

double truncated_normal(double b, Rng& rng) {
  if (b <= 0.0) return 0.0;
  const double acceptance = std::erf(b / std::sqrt(2.0));
  if (acceptance >= 0.01) {
    for (;;) {
      const double x = rng.normal();
      if (std::abs(x) < b) return x;
    }
  }
  const double lo = norm_cdf(-b);
  const double u = lo + (1.0 - 2.0 * lo) * rng.uniform();
  return std::clamp(norm_quantile(u), -b, b);
}

double empirical_unsafe_fraction(const AssuranceBound& bound, const PriorModel& model,
                                 const TaskSpec& task, int n_rollouts, Rng& rng) {
  const int zdim = model.flow.cfg.action_dim;
  long violations = 0;
  long steps_total = 0;
  for (int r = 0; r < n_rollouts; ++r) {
    EnvState s = reset(task);
    MatrixXd window = MatrixXd::Zero(model.w, kStateDim);
    for (int t = 0; t < task.horizon; ++t) {
      for (int row = model.w - 1; row > 0; --row) window.row(row) = window.row(row - 1);
      window.row(0) = s.full().transpose();
      const VectorXd cond = model.cond_for(s.full(), window);
      VectorXd z(zdim);
      for (int j = 0; j < zdim; ++j) z(j) = truncated_normal(bound.eta, rng);
      const VectorXd a = model.flow.forward(z, cond);
      const StepOutcome out = step(s, Vector2d(a(0), a(1)), task, t);
      violations += out.violation;
      ++steps_total;
      s = out.next_state;
      if (out.done) break;
    }
  }
  return static_cast<double>(violations) / static_cast<double>(steps_total);
}

}  // namespace safer
