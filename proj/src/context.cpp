#include "safer/context.hpp"

#include <cmath>
#include <stdexcept>

namespace safer {

namespace {

double softplus(double x) {
  if (x > 30.0) return x;
  return std::log1p(std::exp(x));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

VectorXd ContextPosterior::sample(Rng& rng) const {
  VectorXd eps(mu.size());
  for (int i = 0; i < eps.size(); ++i) eps(i) = rng.normal();
  return sample(eps);
}

double kl_diag_gaussian_to_std(const VectorXd& mu, const VectorXd& sigma) {
  double kl = 0.0;
  for (int i = 0; i < mu.size(); ++i) {
    kl += 0.5 * (mu(i) * mu(i) + sigma(i) * sigma(i) - 1.0) - std::log(sigma(i));
  }
  return kl;
}

double ContextPosterior::kl_to_prior() const { return kl_diag_gaussian_to_std(mu, sigma); }

WindowEncoder WindowEncoder::make(int w, Rng& rng, int hidden) {
  WindowEncoder e;
  e.w = w;
  e.embed = Mlp::make({e.state_dim, hidden, hidden, e.embed_dim}, rng);
  e.head = Mlp::make({2 * e.embed_dim, hidden, hidden, 2 * kContextDim}, rng,
                     /*zero_last=*/true);
  return e;
}

ContextPosterior WindowEncoder::posterior(const MatrixXd& window) const {
  if (window.rows() != w || window.cols() != state_dim)
    throw std::invalid_argument("posterior: window shape mismatch");
  MatrixXd flat(1, w * state_dim);
  for (int r = 0; r < w; ++r)
    flat.block(0, r * state_dim, 1, state_dim) = window.row(r);
  MatrixXd mu, sigma;
  posterior_batch(flat, mu, sigma);
  ContextPosterior p;
  p.mu = mu.row(0).transpose();
  p.sigma = sigma.row(0).transpose();
  return p;
}

void WindowEncoder::posterior_batch(const MatrixXd& windows, MatrixXd& mu, MatrixXd& sigma,
                                    Cache* cache) const {
  if (windows.cols() != w * state_dim)
    throw std::invalid_argument("posterior_batch: window shape mismatch");
  const auto n = windows.rows();
  MatrixXd rows(n * w, state_dim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int r = 0; r < w; ++r)
      rows.row(i * w + r) = windows.block(i, r * state_dim, 1, state_dim);

  Mlp::Cache embed_cache;
  const MatrixXd emb = embed.forward_cached(rows, embed_cache);

  MatrixXd feat(n, 2 * embed_dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    feat.block(i, 0, 1, embed_dim) = emb.middleRows(i * w, w).colwise().mean();
    feat.block(i, embed_dim, 1, embed_dim) = emb.row(i * w);  // most-recent state
  }

  Mlp::Cache head_cache;
  const MatrixXd out = head.forward_cached(feat, head_cache);
  mu = out.leftCols(kContextDim);
  const MatrixXd sigma_raw = out.rightCols(kContextDim);
  sigma.resize(n, kContextDim);
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < kContextDim; ++j)
      sigma(i, j) = softplus(sigma_raw(i, j)) + kSigmaFloor;

  if (cache) {
    cache->embed_cache = std::move(embed_cache);
    cache->head_cache = std::move(head_cache);
    cache->sigma_raw = sigma_raw;
    cache->n = n;
  }
}

void WindowEncoder::backward(const Cache& cache, const MatrixXd& dMu, const MatrixXd& dSigma,
                             Grad& grad) const {
  const auto n = cache.n;
  MatrixXd dOut(n, 2 * kContextDim);
  dOut.leftCols(kContextDim) = dMu;
  for (Eigen::Index i = 0; i < n; ++i)
    for (int j = 0; j < kContextDim; ++j)
      dOut(i, kContextDim + j) = dSigma(i, j) * sigmoid(cache.sigma_raw(i, j));

  const MatrixXd dFeat = grad.head.backward(head, cache.head_cache, dOut);

  MatrixXd dEmb = MatrixXd::Zero(n * w, embed_dim);
  const double inv_w = 1.0 / static_cast<double>(w);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int r = 0; r < w; ++r)
      dEmb.row(i * w + r) = inv_w * dFeat.block(i, 0, 1, embed_dim);
    dEmb.row(i * w) += dFeat.block(i, embed_dim, 1, embed_dim);
  }
  grad.embed.backward(embed, cache.embed_cache, dEmb);
}

void WindowEncoder::to_flat(VectorXd& out) const {
  out.resize(param_count());
  embed.to_flat(out.data());
  head.to_flat(out.data() + embed.param_count());
}

void WindowEncoder::from_flat(const VectorXd& in) {
  if (in.size() != param_count())
    throw std::invalid_argument("WindowEncoder::from_flat: size mismatch");
  embed.from_flat(in.data());
  head.from_flat(in.data() + embed.param_count());
}

MatrixXd stack_windows(const std::vector<MatrixXd>& windows) {
  if (windows.empty()) return {};
  const auto w = windows[0].rows();
  const auto d = windows[0].cols();
  MatrixXd out(static_cast<Eigen::Index>(windows.size()), w * d);
  for (std::size_t i = 0; i < windows.size(); ++i)
    for (Eigen::Index r = 0; r < w; ++r)
      out.block(static_cast<Eigen::Index>(i), r * d, 1, d) = windows[i].row(r);
  return out;
}

}  // namespace safer
