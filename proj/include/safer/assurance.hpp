#pragma once

#include "safer/training.hpp"

namespace safer {

struct AssuranceBound {
  double eta = 0.0;
  double eps_target = 1.0;  // desired safe fraction in (0, 1]
  int iterations = 0;
  bool converged = false;
};

// Latent of a recorded step under the trained prior, using the mean context.
VectorXd latent_of(const PriorModel& model, const LabeledStep& step);

// Precomputed latents for a dataset view (one row per step).
MatrixXd latents_of(const PriorModel& model, const DatasetView& view);

// Gradient-free contraction of the safety-assurance bound: starting from
// eta0, shrink eta through the observed latent max-components until at least
// an eps_target fraction of the in-bound latents are safe. Larger eps_target
// gives a tighter (never larger) bound.
AssuranceBound compute_eta(const PriorModel& model, const DatasetView& d_safe,
                           const DatasetView& d_unsafe, double eps_target,
                           double eta0 = 10.0);

// Same iteration over already-computed latent matrices; exposed for the
// brute-force oracle tests.
AssuranceBound compute_eta_from_latents(const MatrixXd& z_safe, const MatrixXd& z_unsafe,
                                        double eps_target, double eta0 = 10.0);

// Roll out with z drawn from N(0, I) truncated per component to (-eta, eta)
// and the context fixed at its posterior mean; returns the fraction of steps
// with a safety violation.
double empirical_unsafe_fraction(const AssuranceBound& bound, const PriorModel& model,
                                 const TaskSpec& task, int n_rollouts, Rng& rng);

// Truncated standard-normal draw on (-b, b); rejection with an inverse-CDF
// fallback for very tight bounds.
double truncated_normal(double b, Rng& rng);

}  // namespace safer
