#pragma once

#include <Eigen/Dense>
#include <vector>

#include "safer/nncore.hpp"

namespace safer {

struct FlowConfig {
  int action_dim = 2;
  int cond_dim = 13;  // conditioner input: proprio (5) ++ context (8) by default
  int n_layers = 3;
  int hidden = 64;
  double scale_cap = 3.0;
};

// Affine coupling layer with a single-dim mask: dimension keep_dim passes
// through, the other is scaled and shifted conditioned on (kept dim, cond).
// The log-scale output is scale_cap * tanh(raw).
struct CouplingLayer {
  int keep_dim = 0;
  Mlp scale_net;
  Mlp shift_net;
};

struct FlowGrad;

// Conditional Real-NVP over 2-d actions with standard-normal z prior.
// Final net layers start at zero, so a fresh flow is the identity map.
struct Flow {
  FlowConfig cfg;
  std::vector<CouplingLayer> layers;

  static Flow make(const FlowConfig& cfg, Rng& rng);

  // Single-sample interfaces.
  VectorXd forward(const VectorXd& z, const VectorXd& cond) const;
  std::pair<VectorXd, double> inverse(const VectorXd& a, const VectorXd& cond) const;
  double log_prob(const VectorXd& a, const VectorXd& cond) const;

  // Batched interfaces; one sample per row.
  MatrixXd forward(const MatrixXd& Z, const MatrixXd& Cond) const;

  struct Cache {
    struct Layer {
      MatrixXd in;        // net input: [kept dim, cond]
      Mlp::Cache s_cache;
      Mlp::Cache t_cache;
      VectorXd s_raw;     // pre-tanh scale output
      VectorXd s;         // scale_cap * tanh(s_raw)
      VectorXd x_other;   // transformed component after this inverse layer
      VectorXd u;         // untransformed component before this inverse layer
    };
    std::vector<Layer> layers;  // in inverse application order (last flow layer first)
    MatrixXd z;                 // final latents
  };

  // Returns (Z, log_det_inv per sample); log_det_inv = sum of -s over layers.
  std::pair<MatrixXd, VectorXd> inverse_batch(const MatrixXd& A, const MatrixXd& Cond,
                                              Cache* cache = nullptr) const;
  // log p(a | cond) = log N(z) + log_det_inv, per sample.
  VectorXd log_prob_batch(const MatrixXd& A, const MatrixXd& Cond,
                          Cache* cache = nullptr) const;

  // Backprop of sum_i coeff(i) * log_prob_i through the cached inverse pass.
  // Accumulates parameter gradients and returns d/dCond (n x cond_dim).
  MatrixXd log_prob_backward(const Cache& cache, const VectorXd& coeff,
                             FlowGrad& grad) const;

  int param_count() const;
  void to_flat(VectorXd& out) const;
  void from_flat(const VectorXd& in);
};

struct FlowGrad {
  std::vector<MlpGrad> scale;
  std::vector<MlpGrad> shift;

  explicit FlowGrad(const Flow& f);
  void zero();
  void to_flat(VectorXd& out) const;
};

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

}  // namespace safer
