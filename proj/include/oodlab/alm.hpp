#pragma once

// Augmented Lagrangian state for wild-data constrained training.
//
// Two inequality constraints c_i <= 0 are carried:
//   c1 = ID false-alarm surrogate - alpha
//   c2 = classification loss      - tau
// The per-step objective is
//   wild_loss + sum_i [ lambda_i c_i + (beta_i / 2) max(0, c_i)^2 ]
// and the duals/penalties move once per epoch from validation measurements.

#include "oodlab/diffcore.hpp"

#include <limits>

namespace oodlab {

struct AlmConfig {
  double alpha = 0.1;
  double tau = 0.0;
  double eta_lambda = 0.001;
  double beta_max = 5.0;  // +inf removes the cap
  double beta_growth = 2.0;
  double beta_init = 0.5;

  void validate() const;
};

struct AlmState {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
  double beta1 = 0.0;
  double beta2 = 0.0;
  double c1 = 0.0;
  double c2 = 0.0;

  static AlmState initial(const AlmConfig& config);
  /// lambda_i >= 0 and beta_i in [beta_init, beta_max].
  bool valid(const AlmConfig& config) const;
};

Var alm_objective(Var wild_loss, Var id_false_alarm_loss, Var cls_loss, const AlmState& state,
                  const AlmConfig& config);

/// Scalar version of the penalty sum, for logging and tests.
double alm_penalty(double c, double lambda, double beta);

AlmState alm_epoch_update(const AlmState& state, double measured_c1, double measured_c2,
                          const AlmConfig& config);

enum class Side { in, out };

/// Energy-as-detector loss: mean softplus(E - t) for target `in`,
/// mean softplus(t - E) for target `out`.
Var ood_detector_loss(Var energies, Side target_side, double threshold);
double ood_detector_loss(const Vector& energies, Side target_side, double threshold);

}  // namespace oodlab
