#pragma once

#include <optional>
#include <vector>

#include "safer/context.hpp"
#include "safer/data.hpp"
#include "safer/flow.hpp"

namespace safer {

// What the flow conditions on. ProprioContext is the full method (proprio ++
// inferred safety context); FullState is the plain behavioral-prior baseline;
// ProprioOnly is the no-safety-variable ablation.
enum class Conditioning { ProprioContext, FullState, ProprioOnly };

inline constexpr int kProprioDim = 5;
inline constexpr int kStateDim = 9;

struct PriorModel {
  Conditioning conditioning = Conditioning::ProprioContext;
  Flow flow;
  std::optional<WindowEncoder> encoder;
  int w = 16;

  static PriorModel make(Conditioning cond, int w, Rng& rng, int hidden = 64);

  int cond_dim() const;
  int param_count() const;
  void to_flat(VectorXd& out) const;
  void from_flat(const VectorXd& in);

  // Conditioner row for acting: proprio ++ mean context (or the variant's
  // choice). window is w x 9, most-recent-first.
  VectorXd cond_for(const Eigen::Matrix<double, 9, 1>& state, const MatrixXd& window) const;
};

struct PriorGrad {
  FlowGrad flow;
  std::optional<WindowEncoder::Grad> encoder;

  explicit PriorGrad(const PriorModel& m);
  void zero();
  VectorXd to_flat() const;
};

struct Batch {
  MatrixXd states;   // n x 9
  MatrixXd actions;  // n x 2
  MatrixXd windows;  // n x (w*9)

  Eigen::Index size() const { return states.rows(); }
};

Batch gather_batch(const DatasetView& view, const std::vector<std::size_t>& rows);

struct SaferConfig {
  double lambda = 1e-4;
  int steps = 50000;
  int batch = 128;
  double lr = 1e-4;
  OptKind optimizer = OptKind::SgdMomentum;
  double clip = 1.0;
  double unsafe_floor = -50.0;  // L_min, nats
  std::uint64_t seed = 0;
  int log_every = 100;
  int hidden = 64;
};

struct LossStats {
  double loss = 0.0;
  double safe_ll = 0.0;
  double unsafe_ll = 0.0;
  double kl_safe = 0.0;
  double kl_unsafe = 0.0;
  double clamped_fraction = 0.0;
};

// SAFER contrastive objective. eps_* are the reparameterization draws
// (n x 8), ignored for encoder-free variants. unsafe may be null (lambda-0
// maximum-likelihood training). grad may be null to evaluate the value only.
double contrastive_loss(const PriorModel& model, const Batch& safe, const Batch* unsafe,
                        const SaferConfig& cfg, const MatrixXd& eps_safe,
                        const MatrixXd& eps_unsafe, LossStats* stats, PriorGrad* grad);

struct TrainLogRow {
  int step = 0;
  LossStats stats;
};

struct TrainResult {
  PriorModel model;
  std::vector<TrainLogRow> log;
  int skipped_steps = 0;
};

TrainResult train_safer(const DatasetView& d_safe, const DatasetView& d_unsafe,
                        const SaferConfig& cfg,
                        Conditioning cond = Conditioning::ProprioContext);

// Maximum-likelihood prior (lambda = 0). with_context selects the latent-
// variable variant; include_unsafe trains on all pairs from successful
// rollouts instead of the safe partition.
TrainResult train_parrot(const DatasetView& d, const SaferConfig& cfg, bool with_context,
                         bool include_unsafe);

// Empirical check of the Markov relaxation: over n_context_samples context
// draws per element, lhs = P(p > eps_mc), rhs = E[p] / eps_mc.
std::pair<double, double> markov_bound_check(const PriorModel& model, const Batch& unsafe,
                                             double eps_mc, int n_context_samples, Rng& rng);

void write_training_log_csv(const std::vector<TrainLogRow>& log, const std::string& path);

}  // namespace safer
