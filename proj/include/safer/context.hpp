#pragma once

#include <Eigen/Dense>

#include "safer/nncore.hpp"

namespace safer {

inline constexpr int kContextDim = 8;
inline constexpr double kSigmaFloor = 1e-4;

// Diagonal-Gaussian posterior q(c | Lambda).
struct ContextPosterior {
  VectorXd mu;     // 8
  VectorXd sigma;  // 8, softplus(raw) + floor

  VectorXd sample(Rng& rng) const;
  VectorXd sample(const VectorXd& eps) const { return mu + sigma.cwiseProduct(eps); }
  // KL(q || N(0, I)) in closed form.
  double kl_to_prior() const;
  const VectorXd& mean() const { return mu; }
};

// Permutation-invariant window encoder: per-state embedding, mean pooling
// over the window concatenated with the most-recent-state embedding, then a
// head emitting (mu_raw, sigma_raw).
struct WindowEncoder {
  int w = 16;
  int state_dim = 9;
  int embed_dim = 32;
  Mlp embed;  // state_dim -> ... -> embed_dim
  Mlp head;   // 2*embed_dim -> ... -> 2*kContextDim, zero-initialized last layer

  static WindowEncoder make(int w, Rng& rng, int hidden = 64);

  ContextPosterior posterior(const MatrixXd& window) const;  // window: w x state_dim

  struct Cache {
    Mlp::Cache embed_cache;   // over n*w stacked rows
    Mlp::Cache head_cache;
    MatrixXd sigma_raw;       // n x kContextDim
    Eigen::Index n = 0;
  };

  // Batched: windows given as n x (w*state_dim), each row a row-major window.
  void posterior_batch(const MatrixXd& windows, MatrixXd& mu, MatrixXd& sigma,
                       Cache* cache = nullptr) const;

  struct Grad {
    MlpGrad embed;
    MlpGrad head;
    explicit Grad(const WindowEncoder& e) : embed(e.embed), head(e.head) {}
    void zero() {
      embed.zero();
      head.zero();
    }
  };

  // dMu, dSigma are gradients w.r.t. mu and the post-softplus sigma.
  void backward(const Cache& cache, const MatrixXd& dMu, const MatrixXd& dSigma,
                Grad& grad) const;

  int param_count() const { return embed.param_count() + head.param_count(); }
  void to_flat(VectorXd& out) const;
  void from_flat(const VectorXd& in);
};

// Row-major flattening used by the batched encoder path.
MatrixXd stack_windows(const std::vector<MatrixXd>& windows);

double kl_diag_gaussian_to_std(const VectorXd& mu, const VectorXd& sigma);

}  // namespace safer
