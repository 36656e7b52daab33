#include "safer/flow.hpp"

#include <cmath>
#include <stdexcept>

namespace safer {

Flow Flow::make(const FlowConfig& cfg, Rng& rng) {
  if (cfg.action_dim != 2) throw std::invalid_argument("Flow: action_dim must be 2");
  Flow f;
  f.cfg = cfg;
  for (int l = 0; l < cfg.n_layers; ++l) {
    CouplingLayer layer;
    layer.keep_dim = l % 2;  // alternating single-dim masks
    const std::vector<int> sizes = {1 + cfg.cond_dim, cfg.hidden, cfg.hidden, 1};
    layer.scale_net = Mlp::make(sizes, rng, /*zero_last=*/true);
    layer.shift_net = Mlp::make(sizes, rng, /*zero_last=*/true);
    f.layers.push_back(std::move(layer));
  }
  return f;
}

namespace {

MatrixXd net_input(const Eigen::Ref<const VectorXd>& kept, const MatrixXd& cond) {
  MatrixXd in(cond.rows(), 1 + cond.cols());
  in.col(0) = kept;
  in.rightCols(cond.cols()) = cond;
  return in;
}

}  // namespace

MatrixXd Flow::forward(const MatrixXd& Z, const MatrixXd& Cond) const {
  if (Z.cols() != cfg.action_dim || Cond.cols() != cfg.cond_dim || Z.rows() != Cond.rows())
    throw std::invalid_argument("Flow::forward: shape mismatch");
  MatrixXd X = Z;
  for (const CouplingLayer& layer : layers) {
    const int k = layer.keep_dim;
    const int o = 1 - k;
    const MatrixXd in = net_input(X.col(k), Cond);
    const VectorXd s_raw = layer.scale_net.forward(in).col(0);
    const VectorXd s = cfg.scale_cap * s_raw.array().tanh();
    const VectorXd t = layer.shift_net.forward(in).col(0);
    X.col(o) = (X.col(o).array() * s.array().exp() + t.array()).matrix();
  }
  return X;
}

VectorXd Flow::forward(const VectorXd& z, const VectorXd& cond) const {
  return forward(MatrixXd(z.transpose()), MatrixXd(cond.transpose())).row(0).transpose();
}

std::pair<MatrixXd, VectorXd> Flow::inverse_batch(const MatrixXd& A, const MatrixXd& Cond,
                                                  Cache* cache) const {
  if (A.cols() != cfg.action_dim || Cond.cols() != cfg.cond_dim || A.rows() != Cond.rows())
    throw std::invalid_argument("Flow::inverse: shape mismatch");
  const auto n = A.rows();
  MatrixXd Y = A;
  VectorXd log_det_inv = VectorXd::Zero(n);
  if (cache) {
    cache->layers.clear();
    cache->layers.resize(layers.size());
  }
  for (int j = 0; j < static_cast<int>(layers.size()); ++j) {
    const CouplingLayer& layer = layers[layers.size() - 1 - j];
    const int k = layer.keep_dim;
    const int o = 1 - k;
    MatrixXd in = net_input(Y.col(k), Cond);
    Mlp::Cache s_cache, t_cache;
    const VectorXd s_raw = layer.scale_net.forward_cached(in, s_cache).col(0);
    const VectorXd s = cfg.scale_cap * s_raw.array().tanh();
    const VectorXd t = layer.shift_net.forward_cached(in, t_cache).col(0);
    const VectorXd u = Y.col(o);
    const VectorXd x_other = ((u - t).array() * (-s).array().exp()).matrix();
    log_det_inv -= s;
    if (cache) {
      Cache::Layer& cl = cache->layers[j];
      cl.in = std::move(in);
      cl.s_cache = std::move(s_cache);
      cl.t_cache = std::move(t_cache);
      cl.s_raw = s_raw;
      cl.s = s;
      cl.x_other = x_other;
      cl.u = u;
    }
    Y.col(o) = x_other;
  }
  if (cache) cache->z = Y;
  return {Y, log_det_inv};
}

std::pair<VectorXd, double> Flow::inverse(const VectorXd& a, const VectorXd& cond) const {
  auto [Z, ld] = inverse_batch(MatrixXd(a.transpose()), MatrixXd(cond.transpose()));
  return {Z.row(0).transpose(), ld(0)};
}

VectorXd Flow::log_prob_batch(const MatrixXd& A, const MatrixXd& Cond, Cache* cache) const {
  auto [Z, log_det_inv] = inverse_batch(A, Cond, cache);
  const VectorXd log_pz =
      (-0.5 * Z.array().square().rowwise().sum() - 0.5 * cfg.action_dim * kLog2Pi).matrix();
  return log_pz + log_det_inv;
}

double Flow::log_prob(const VectorXd& a, const VectorXd& cond) const {
  return log_prob_batch(MatrixXd(a.transpose()), MatrixXd(cond.transpose()))(0);
}

MatrixXd Flow::log_prob_backward(const Cache& cache, const VectorXd& coeff,
                                 FlowGrad& grad) const {
  const auto n = cache.z.rows();
  MatrixXd dCond = MatrixXd::Zero(n, cfg.cond_dim);
  // d log p / d z = -z, weighted per sample.
  MatrixXd G = (cache.z.array().colwise() * (-coeff).array()).matrix();
  for (int j = static_cast<int>(layers.size()) - 1; j >= 0; --j) {
    const CouplingLayer& layer = layers[layers.size() - 1 - j];
    const Cache::Layer& cl = cache.layers[j];
    const int k = layer.keep_dim;
    const int o = 1 - k;
    const VectorXd exp_neg_s = (-cl.s.array()).exp().matrix();
    // Scale gets gradient from the transformed component and the log-det term.
    const VectorXd gs = (-G.col(o).array() * cl.x_other.array() - coeff.array()).matrix();
    const VectorXd tanh_sr = cl.s_raw.array().tanh().matrix();
    const MatrixXd ds_raw =
        (gs.array() * cfg.scale_cap * (1.0 - tanh_sr.array().square())).matrix();
    const MatrixXd gt = (-G.col(o).array() * exp_neg_s.array()).matrix();
    MlpGrad& sg = grad.scale[layers.size() - 1 - j];
    MlpGrad& tg = grad.shift[layers.size() - 1 - j];
    const MatrixXd g_in_s = sg.backward(layer.scale_net, cl.s_cache, ds_raw);
    const MatrixXd g_in_t = tg.backward(layer.shift_net, cl.t_cache, gt);
    const VectorXd gu = (G.col(o).array() * exp_neg_s.array()).matrix();
    const VectorXd gm = G.col(k) + g_in_s.col(0) + g_in_t.col(0);
    dCond += g_in_s.rightCols(cfg.cond_dim) + g_in_t.rightCols(cfg.cond_dim);
    G.col(k) = gm;
    G.col(o) = gu;
  }
  return dCond;
}

int Flow::param_count() const {
  int n = 0;
  for (const CouplingLayer& l : layers) n += l.scale_net.param_count() + l.shift_net.param_count();
  return n;
}

void Flow::to_flat(VectorXd& out) const {
  out.resize(param_count());
  double* p = out.data();
  for (const CouplingLayer& l : layers) {
    l.scale_net.to_flat(p);
    p += l.scale_net.param_count();
    l.shift_net.to_flat(p);
    p += l.shift_net.param_count();
  }
}

void Flow::from_flat(const VectorXd& in) {
  if (in.size() != param_count()) throw std::invalid_argument("Flow::from_flat: size mismatch");
  const double* p = in.data();
  for (CouplingLayer& l : layers) {
    l.scale_net.from_flat(p);
    p += l.scale_net.param_count();
    l.shift_net.from_flat(p);
    p += l.shift_net.param_count();
  }
}

FlowGrad::FlowGrad(const Flow& f) {
  for (const CouplingLayer& l : f.layers) {
    scale.emplace_back(l.scale_net);
    shift.emplace_back(l.shift_net);
  }
}

void FlowGrad::zero() {
  for (auto& g : scale) g.zero();
  for (auto& g : shift) g.zero();
}

void FlowGrad::to_flat(VectorXd& out) const {
  int n = 0;
  for (size_t i = 0; i < scale.size(); ++i)
    n += scale[i].param_count() + shift[i].param_count();
  out.resize(n);
  double* p = out.data();
  for (size_t i = 0; i < scale.size(); ++i) {
    scale[i].to_flat(p);
    p += scale[i].param_count();
    shift[i].to_flat(p);
    p += shift[i].param_count();
  }
}

}  // namespace safer
