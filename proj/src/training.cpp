#include "safer/training.hpp"

#include <cmath>
#include <deque>
#include <fstream>
#include <stdexcept>

namespace safer {

PriorModel PriorModel::make(Conditioning cond, int w, Rng& rng, int hidden) {
  PriorModel m;
  m.conditioning = cond;
  m.w = w;
  FlowConfig fc;
  fc.hidden = hidden;
  fc.cond_dim = cond == Conditioning::ProprioContext ? kProprioDim + kContextDim
               : cond == Conditioning::FullState     ? kStateDim
                                                     : kProprioDim;
  m.flow = Flow::make(fc, rng);
  if (cond == Conditioning::ProprioContext) m.encoder = WindowEncoder::make(w, rng, hidden);
  return m;
}

int PriorModel::cond_dim() const { return flow.cfg.cond_dim; }

int PriorModel::param_count() const {
  return flow.param_count() + (encoder ? encoder->param_count() : 0);
}

void PriorModel::to_flat(VectorXd& out) const {
  VectorXd fp;
  flow.to_flat(fp);
  if (!encoder) {
    out = fp;
    return;
  }
  VectorXd ep;
  encoder->to_flat(ep);
  out.resize(fp.size() + ep.size());
  out << fp, ep;
}

void PriorModel::from_flat(const VectorXd& in) {
  const int nf = flow.param_count();
  flow.from_flat(in.head(nf));
  if (encoder) encoder->from_flat(in.tail(encoder->param_count()));
}

VectorXd PriorModel::cond_for(const Eigen::Matrix<double, 9, 1>& state,
                              const MatrixXd& window) const {
  switch (conditioning) {
    case Conditioning::FullState:
      return state;
    case Conditioning::ProprioOnly:
      return state.head(kProprioDim);
    case Conditioning::ProprioContext: {
      VectorXd cond(kProprioDim + kContextDim);
      cond << state.head(kProprioDim), encoder->posterior(window).mean();
      return cond;
    }
  }
  throw std::logic_error("unreachable");
}

PriorGrad::PriorGrad(const PriorModel& m) : flow(m.flow) {
  if (m.encoder) encoder.emplace(*m.encoder);
}

void PriorGrad::zero() {
  flow.zero();
  if (encoder) encoder->zero();
}

VectorXd PriorGrad::to_flat() const {
  VectorXd fg;
  flow.to_flat(fg);
  if (!encoder) return fg;
  const int ne = encoder->embed.param_count() + encoder->head.param_count();
  VectorXd out(fg.size() + ne);
  out.head(fg.size()) = fg;
  double* p = out.data() + fg.size();
  encoder->embed.to_flat(p);
  encoder->head.to_flat(p + encoder->embed.param_count());
  return out;
}

Batch gather_batch(const DatasetView& view, const std::vector<std::size_t>& rows) {
  Batch b;
  const auto n = static_cast<Eigen::Index>(rows.size());
  if (n == 0) return b;
  const int w = static_cast<int>(view[rows[0]].window.rows());
  b.states.resize(n, kStateDim);
  b.actions.resize(n, 2);
  b.windows.resize(n, w * kStateDim);
  for (Eigen::Index i = 0; i < n; ++i) {
    const LabeledStep& s = view[rows[i]];
    b.states.row(i) = s.state.transpose();
    b.actions.row(i) = s.action.transpose();
    for (int r = 0; r < w; ++r)
      b.windows.block(i, r * kStateDim, 1, kStateDim) = s.window.row(r);
  }
  return b;
}

namespace {

struct SidePass {
  MatrixXd cond;
  MatrixXd mu, sigma;
  WindowEncoder::Cache enc_cache;
  Flow::Cache flow_cache;
  VectorXd logp;
  double kl_mean = 0.0;
};

// Forward evaluation of one batch side; returns per-sample log-likelihoods
// and caches for the backward pass.
void side_forward(const PriorModel& model, const Batch& batch, const MatrixXd& eps,
                  bool need_grad, SidePass& out) {
  const auto n = batch.size();
  const bool ctx = model.conditioning == Conditioning::ProprioContext;
  if (ctx) {
    model.encoder->posterior_batch(batch.windows, out.mu, out.sigma,
                                   need_grad ? &out.enc_cache : nullptr);
    const MatrixXd c = out.mu + out.sigma.cwiseProduct(eps);
    out.cond.resize(n, kProprioDim + kContextDim);
    out.cond.leftCols(kProprioDim) = batch.states.leftCols(kProprioDim);
    out.cond.rightCols(kContextDim) = c;
    double kl = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      kl += kl_diag_gaussian_to_std(out.mu.row(i).transpose(), out.sigma.row(i).transpose());
    out.kl_mean = kl / static_cast<double>(n);
  } else if (model.conditioning == Conditioning::FullState) {
    out.cond = batch.states;
  } else {
    out.cond = batch.states.leftCols(kProprioDim);
  }
  out.logp = model.flow.log_prob_batch(batch.actions, out.cond,
                                       need_grad ? &out.flow_cache : nullptr);
}

// Backward of coeff^T logp + kl_coeff * mean KL for one side.
void side_backward(const PriorModel& model, const Batch& batch, const MatrixXd& eps,
                   const SidePass& pass, const VectorXd& coeff, double kl_coeff,
                   PriorGrad& grad) {
  const MatrixXd dCond = model.flow.log_prob_backward(pass.flow_cache, coeff, grad.flow);
  if (model.conditioning != Conditioning::ProprioContext) return;
  const auto n = batch.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  MatrixXd dMu = dCond.rightCols(kContextDim);
  MatrixXd dSigma = dCond.rightCols(kContextDim).cwiseProduct(eps);
  if (kl_coeff != 0.0) {
    dMu += kl_coeff * inv_n * pass.mu;
    dSigma += (kl_coeff * inv_n) *
              (pass.sigma.array() - pass.sigma.array().inverse()).matrix();
  }
  model.encoder->backward(pass.enc_cache, dMu, dSigma, *grad.encoder);
}

}  // namespace

double contrastive_loss(const PriorModel& model, const Batch& safe, const Batch* unsafe,
                        const SaferConfig& cfg, const MatrixXd& eps_safe,
                        const MatrixXd& eps_unsafe, LossStats* stats, PriorGrad* grad) {
  if (safe.size() == 0) throw std::invalid_argument("contrastive_loss: empty safe batch");
  if (unsafe && unsafe->size() == 0)
    throw std::invalid_argument("contrastive_loss: empty unsafe batch");
  const bool need_grad = grad != nullptr;

  SidePass sp;
  side_forward(model, safe, eps_safe, need_grad, sp);
  const double safe_ll = sp.logp.mean();

  double unsafe_term = 0.0;
  double unsafe_ll = 0.0;
  double kl_unsafe = 0.0;
  double clamped_fraction = 0.0;
  SidePass up;
  VectorXd unsafe_coeff;
  if (unsafe) {
    side_forward(model, *unsafe, eps_unsafe, need_grad, up);
    const auto n = unsafe->size();
    unsafe_coeff = VectorXd::Zero(n);
    double sum = 0.0;
    int clamped = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (up.logp(i) < cfg.unsafe_floor) {
        // Frozen term: contributes the floor with zero gradient.
        sum += cfg.unsafe_floor;
        ++clamped;
      } else {
        sum += up.logp(i);
        unsafe_coeff(i) = cfg.lambda / static_cast<double>(n);
      }
    }
    unsafe_ll = sum / static_cast<double>(n);
    unsafe_term = cfg.lambda * unsafe_ll;
    kl_unsafe = up.kl_mean;
    clamped_fraction = static_cast<double>(clamped) / static_cast<double>(n);
  }

  const double kl_safe = sp.kl_mean;
  const double loss = -safe_ll + unsafe_term + kl_safe + kl_unsafe;

  if (stats) {
    stats->loss = loss;
    stats->safe_ll = safe_ll;
    stats->unsafe_ll = unsafe_ll;
    stats->kl_safe = kl_safe;
    stats->kl_unsafe = kl_unsafe;
    stats->clamped_fraction = clamped_fraction;
  }

  if (need_grad) {
    const VectorXd safe_coeff =
        VectorXd::Constant(safe.size(), -1.0 / static_cast<double>(safe.size()));
    side_backward(model, safe, eps_safe, sp, safe_coeff, 1.0, *grad);
    if (unsafe) side_backward(model, *unsafe, eps_unsafe, up, unsafe_coeff, 1.0, *grad);
  }
  return loss;
}

namespace {

MatrixXd draw_eps(Eigen::Index n, Rng& rng) {
  MatrixXd eps(n, kContextDim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < kContextDim; ++j) eps(i, j) = rng.normal();
  return eps;
}

TrainResult train_loop(PriorModel model, const DatasetView& d_safe,
                       const DatasetView* d_unsafe, const SaferConfig& cfg) {
  TrainResult res{std::move(model), {}, 0};
  Rng rng(Rng::mix(cfg.seed, 0x7ea1));

  VectorXd params;
  res.model.to_flat(params);
  OptimizerState opt = OptimizerState::make(cfg.optimizer, cfg.lr,
                                            static_cast<int>(params.size()));
  PriorGrad grad(res.model);

  const std::size_t bs = std::min<std::size_t>(cfg.batch, d_safe.size());
  const std::size_t bu =
      d_unsafe ? std::min<std::size_t>(cfg.batch, d_unsafe->size()) : 0;

  std::deque<int> skip_window;
  int skips_in_window = 0;

  for (int step = 0; step < cfg.steps; ++step) {
    const Batch safe = gather_batch(d_safe, sample_indices(d_safe.size(), bs, rng));
    Batch unsafe;
    if (d_unsafe) unsafe = gather_batch(*d_unsafe, sample_indices(d_unsafe->size(), bu, rng));
    const MatrixXd eps_s = draw_eps(safe.size(), rng);
    const MatrixXd eps_u = d_unsafe ? draw_eps(unsafe.size(), rng) : MatrixXd();

    grad.zero();
    LossStats stats;
    bool skipped = false;
    double loss = 0.0;
    try {
      loss = contrastive_loss(res.model, safe, d_unsafe ? &unsafe : nullptr, cfg, eps_s,
                              eps_u, &stats, &grad);
    } catch (const std::exception&) {
      skipped = true;
    }
    if (!skipped) {
      VectorXd g = grad.to_flat();
      if (!std::isfinite(loss) || !all_finite(g)) {
        skipped = true;
      } else {
        g = clip_gradients(g, cfg.clip);
        opt.step(params, g);
        res.model.from_flat(params);
      }
    }

    skip_window.push_back(skipped ? 1 : 0);
    skips_in_window += skipped ? 1 : 0;
    if (skip_window.size() > 1000) {
      skips_in_window -= skip_window.front();
      skip_window.pop_front();
    }
    if (skipped) ++res.skipped_steps;
    if (skip_window.size() == 1000 && skips_in_window > 100)
      throw std::runtime_error("diverged");

    if (step % cfg.log_every == 0 && !skipped) res.log.push_back({step, stats});
  }
  return res;
}

}  // namespace

TrainResult train_safer(const DatasetView& d_safe, const DatasetView& d_unsafe,
                        const SaferConfig& cfg, Conditioning cond) {
  if (d_safe.size() == 0 || d_unsafe.size() == 0)
    throw std::runtime_error("degenerate dataset");
  Rng init_rng(Rng::mix(cfg.seed, 0x1217));
  const int w = static_cast<int>(d_safe[0].window.rows());
  PriorModel model = PriorModel::make(cond, w, init_rng, cfg.hidden);
  return train_loop(std::move(model), d_safe, &d_unsafe, cfg);
}

TrainResult train_parrot(const DatasetView& d, const SaferConfig& cfg, bool with_context,
                         bool include_unsafe) {
  DatasetView view;
  view.ds = d.ds;
  for (std::size_t i : d.idx) {
    const LabeledStep& s = d.ds->steps[i];
    if (s.in_successful_rollout != 1) continue;
    if (!include_unsafe && s.violation != 0) continue;
    view.idx.push_back(i);
  }
  if (view.size() == 0) throw std::runtime_error("degenerate dataset");
  Rng init_rng(Rng::mix(cfg.seed, 0x1217));
  PriorModel model = PriorModel::make(
      with_context ? Conditioning::ProprioContext : Conditioning::FullState, d.ds->w,
      init_rng, cfg.hidden);
  return train_loop(std::move(model), view, nullptr, cfg);
}

std::pair<double, double> markov_bound_check(const PriorModel& model, const Batch& unsafe,
                                             double eps_mc, int n_context_samples, Rng& rng) {
  if (eps_mc <= 0.0 || eps_mc >= 1.0)
    throw std::invalid_argument("markov_bound_check: eps_mc must be in (0,1)");
  if (model.conditioning != Conditioning::ProprioContext)
    throw std::invalid_argument("markov_bound_check: model has no context posterior");
  const auto n = unsafe.size();
  long exceed = 0;
  double sum_p = 0.0;
  long total = 0;
  MatrixXd mu, sigma;
  model.encoder->posterior_batch(unsafe.windows, mu, sigma);
  for (Eigen::Index i = 0; i < n; ++i) {
    VectorXd cond(kProprioDim + kContextDim);
    cond.head(kProprioDim) = unsafe.states.row(i).head(kProprioDim).transpose();
    for (int k = 0; k < n_context_samples; ++k) {
      VectorXd c(kContextDim);
      for (int j = 0; j < kContextDim; ++j) c(j) = mu(i, j) + sigma(i, j) * rng.normal();
      cond.tail(kContextDim) = c;
      const double p = std::exp(model.flow.log_prob(unsafe.actions.row(i).transpose(), cond));
      sum_p += p;
      if (p > eps_mc) ++exceed;
      ++total;
    }
  }
  const double lhs = static_cast<double>(exceed) / static_cast<double>(total);
  const double rhs = (sum_p / static_cast<double>(total)) / eps_mc;
  return {lhs, rhs};
}

void write_training_log_csv(const std::vector<TrainLogRow>& log, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path);
  f << "step,loss,safe_ll,unsafe_ll,kl_safe,kl_unsafe,clamped_fraction\n";
  for (const TrainLogRow& r : log) {
    f << r.step << ',' << r.stats.loss << ',' << r.stats.safe_ll << ',' << r.stats.unsafe_ll
      << ',' << r.stats.kl_safe << ',' << r.stats.kl_unsafe << ',' << r.stats.clamped_fraction
      << '\n';
  }
}

}  // namespace safer
