#pragma once

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

#include "safer/rng.hpp"

namespace safer {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Dense net, tanh hidden layers, linear output. Batches are row-major:
// one sample per row.
struct Mlp {
  std::vector<MatrixXd> W;  // out x in
  std::vector<VectorXd> b;

  // sizes = {in, h1, ..., out}. zero_last zeroes the final layer so the
  // composite module starts as an identity / constant map.
  static Mlp make(const std::vector<int>& sizes, Rng& rng, bool zero_last = false);

  int input_size() const { return static_cast<int>(W.front().cols()); }
  int output_size() const { return static_cast<int>(W.back().rows()); }
  int num_layers() const { return static_cast<int>(W.size()); }

  VectorXd forward(const VectorXd& x) const;
  MatrixXd forward(const MatrixXd& X) const;

  struct Cache {
    std::vector<MatrixXd> acts;  // acts[0] = input, acts[i] = output of layer i
  };
  MatrixXd forward_cached(const MatrixXd& X, Cache& cache) const;

  int param_count() const;
  void to_flat(double* dst) const;
  void from_flat(const double* src);
};

// Gradient accumulator with the same shapes as an Mlp.
struct MlpGrad {
  std::vector<MatrixXd> dW;
  std::vector<VectorXd> db;

  explicit MlpGrad(const Mlp& m);
  void zero();
  int param_count() const;
  void to_flat(double* dst) const;

  // Backprop dY through the cached forward pass; accumulates into this
  // grad and returns dX.
  MatrixXd backward(const Mlp& m, const Mlp::Cache& cache, const MatrixXd& dY);
};

// Global-norm gradient clipping: rescale if ||g|| > max_norm.
VectorXd clip_gradients(const VectorXd& grads, double max_norm);

enum class OptKind { SgdMomentum, Adam };

OptKind opt_kind_from_string(const std::string& s);
std::string to_string(OptKind k);

struct OptimizerState {
  OptKind kind = OptKind::SgdMomentum;
  double lr = 1e-4;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  VectorXd buf_m;  // momentum / first moment
  VectorXd buf_v;  // second moment (adam)
  long t = 0;

  static OptimizerState make(OptKind kind, double lr, int n_params);

  // In-place update; throws std::invalid_argument on non-finite gradients.
  void step(VectorXd& params, const VectorXd& grads);
};

// Central finite differences; the independent oracle used by the gradient
// test suites.
VectorXd finite_difference_gradient(const std::function<double(const VectorXd&)>& f,
                                    const VectorXd& x, double h = 1e-5);

double max_relative_error(const VectorXd& a, const VectorXd& b, double abs_floor = 1e-6);

bool all_finite(const VectorXd& v);
bool all_finite(const MatrixXd& m);

}  // namespace safer
