#include "safer/nncore.hpp"

#include <cmath>
#include <stdexcept>

namespace safer {

Mlp Mlp::make(const std::vector<int>& sizes, Rng& rng, bool zero_last) {
  if (sizes.size() < 2) throw std::invalid_argument("Mlp: need at least two sizes");
  Mlp m;
  for (size_t i = 0; i + 1 < sizes.size(); ++i) {
    const int in = sizes[i];
    const int out = sizes[i + 1];
    MatrixXd W(out, in);
    const double scale = std::sqrt(1.0 / in);
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < in; ++c) W(r, c) = rng.uniform(-scale, scale);
    VectorXd b = VectorXd::Zero(out);
    if (zero_last && i + 2 == sizes.size()) W.setZero();
    m.W.push_back(std::move(W));
    m.b.push_back(std::move(b));
  }
  return m;
}

VectorXd Mlp::forward(const VectorXd& x) const {
  MatrixXd X = x.transpose();
  return forward(X).row(0).transpose();
}

MatrixXd Mlp::forward(const MatrixXd& X) const {
  Cache cache;
  return forward_cached(X, cache);
}

MatrixXd Mlp::forward_cached(const MatrixXd& X, Cache& cache) const {
  if (X.cols() != input_size()) throw std::invalid_argument("Mlp: input shape mismatch");
  cache.acts.clear();
  cache.acts.reserve(W.size() + 1);
  cache.acts.push_back(X);
  MatrixXd h = X;
  for (size_t i = 0; i < W.size(); ++i) {
    MatrixXd z = (h * W[i].transpose()).rowwise() + b[i].transpose();
    if (i + 1 < W.size()) z = z.array().tanh();
    cache.acts.push_back(z);
    h = std::move(z);
  }
  return cache.acts.back();
}

int Mlp::param_count() const {
  int n = 0;
  for (size_t i = 0; i < W.size(); ++i) n += static_cast<int>(W[i].size() + b[i].size());
  return n;
}

void Mlp::to_flat(double* dst) const {
  for (size_t i = 0; i < W.size(); ++i) {
    std::copy(W[i].data(), W[i].data() + W[i].size(), dst);
    dst += W[i].size();
    std::copy(b[i].data(), b[i].data() + b[i].size(), dst);
    dst += b[i].size();
  }
}

void Mlp::from_flat(const double* src) {
  for (size_t i = 0; i < W.size(); ++i) {
    std::copy(src, src + W[i].size(), W[i].data());
    src += W[i].size();
    std::copy(src, src + b[i].size(), b[i].data());
    src += b[i].size();
  }
}

MlpGrad::MlpGrad(const Mlp& m) {
  for (size_t i = 0; i < m.W.size(); ++i) {
    dW.push_back(MatrixXd::Zero(m.W[i].rows(), m.W[i].cols()));
    db.push_back(VectorXd::Zero(m.b[i].size()));
  }
}

void MlpGrad::zero() {
  for (auto& g : dW) g.setZero();
  for (auto& g : db) g.setZero();
}

int MlpGrad::param_count() const {
  int n = 0;
  for (size_t i = 0; i < dW.size(); ++i) n += static_cast<int>(dW[i].size() + db[i].size());
  return n;
}

void MlpGrad::to_flat(double* dst) const {
  for (size_t i = 0; i < dW.size(); ++i) {
    std::copy(dW[i].data(), dW[i].data() + dW[i].size(), dst);
    dst += dW[i].size();
    std::copy(db[i].data(), db[i].data() + db[i].size(), dst);
    dst += db[i].size();
  }
}

MatrixXd MlpGrad::backward(const Mlp& m, const Mlp::Cache& cache, const MatrixXd& dY) {
  const int L = m.num_layers();
  MatrixXd g = dY;
  for (int i = L - 1; i >= 0; --i) {
    // g is the gradient w.r.t. the post-activation output of layer i.
    if (i != L - 1) {
      // tanh' = 1 - tanh^2; cache.acts[i+1] holds tanh(z).
      g = g.array() * (1.0 - cache.acts[i + 1].array().square());
    }
    dW[i].noalias() += g.transpose() * cache.acts[i];
    db[i] += g.colwise().sum().transpose();
    g = g * m.W[i];
  }
  return g;
}

VectorXd clip_gradients(const VectorXd& grads, double max_norm) {
  if (max_norm <= 0.0) throw std::invalid_argument("clip_gradients: max_norm must be positive");
  const double n = grads.norm();
  if (n <= max_norm) return grads;
  return grads * (max_norm / n);
}

OptKind opt_kind_from_string(const std::string& s) {
  if (s == "sgd_momentum") return OptKind::SgdMomentum;
  if (s == "adam") return OptKind::Adam;
  throw std::invalid_argument("unknown optimizer: " + s);
}

std::string to_string(OptKind k) {
  return k == OptKind::SgdMomentum ? "sgd_momentum" : "adam";
}

OptimizerState OptimizerState::make(OptKind kind, double lr, int n_params) {
  OptimizerState o;
  o.kind = kind;
  o.lr = lr;
  o.buf_m = VectorXd::Zero(n_params);
  o.buf_v = VectorXd::Zero(n_params);
  return o;
}

void OptimizerState::step(VectorXd& params, const VectorXd& grads) {
  if (params.size() != buf_m.size() || grads.size() != params.size())
    throw std::invalid_argument("optimizer_step: shape mismatch");
  if (!all_finite(grads)) throw std::invalid_argument("optimizer_step: non-finite gradients");
  ++t;
  if (kind == OptKind::SgdMomentum) {
    buf_m = momentum * buf_m + grads;
    params -= lr * buf_m;
  } else {
    buf_m = beta1 * buf_m + (1.0 - beta1) * grads;
    buf_v = beta2 * buf_v + (1.0 - beta2) * grads.array().square().matrix();
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    params -= (lr * (buf_m / bc1).array() /
               ((buf_v / bc2).array().sqrt() + eps))
                  .matrix();
  }
}

VectorXd finite_difference_gradient(const std::function<double(const VectorXd&)>& f,
                                    const VectorXd& x, double h) {
  VectorXd g(x.size());
  VectorXd xp = x;
  for (int i = 0; i < x.size(); ++i) {
    const double orig = xp(i);
    xp(i) = orig + h;
    const double fp = f(xp);
    xp(i) = orig - h;
    const double fm = f(xp);
    xp(i) = orig;
    g(i) = (fp - fm) / (2.0 * h);
  }
  return g;
}

double max_relative_error(const VectorXd& a, const VectorXd& b, double abs_floor) {
  double worst = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a(i)), std::abs(b(i)), abs_floor});
    worst = std::max(worst, std::abs(a(i) - b(i)) / denom);
  }
  return worst;
}

bool all_finite(const VectorXd& v) { return v.allFinite(); }
bool all_finite(const MatrixXd& m) { return m.allFinite(); }

}  // namespace safer
