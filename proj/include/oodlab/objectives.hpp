#pragma once

// Training losses and the free-energy function. Graph versions build
// differentiable nodes; the Eigen overloads evaluate the same quantities on
// plain matrices for scoring and reporting.

#include "oodlab/diffcore.hpp"

#include <span>

namespace oodlab {

struct MarginPair {
  double m_in = 0.0;
  double m_out = 0.0;

  /// m_in > m_out happens on poorly separated checkpoints; callers warn.
  bool inverted() const { return m_in > m_out; }
};

struct LossWeights {
  double lambda_oe = 0.5;
  double lambda_energy = 0.1;
  double temperature = 1.0;

  void validate() const;
};

/// Mean over the batch of -sum_c y_c log softmax(z)_c. Rows of
/// `onehot_labels` must each contain exactly one 1.
Var cross_entropy(Var logits, const Matrix& onehot_labels);

/// Mean over every (sample, class) cell of the binary cross-entropy,
/// computed as softplus(z) - y z.
Var bce_multi(Var logits, const Matrix& binary_labels);

/// Cross-entropy to the uniform distribution: mean of -(1/C) sum_c log softmax(z)_c.
Var oe_uniform_loss(Var logits);

/// Per-sample free energy -T logsumexp(z / T), shape (n x 1).
Var free_energy(Var logits, double temperature = 1.0);
Vector free_energy(const Matrix& logits, double temperature = 1.0);

/// mean(max(0, E_id - m_in)^2) + mean(max(0, m_out - E_ood)^2).
Var energy_hinge_loss(Var id_energies, Var ood_energies, const MarginPair& margins);

/// Medians of the validation energies; even counts use the midpoint of the
/// two central order statistics.
MarginPair derive_margins(std::span<const double> val_id_energies,
                          std::span<const double> val_ood_energies);

double median(std::span<const double> values);

Var combined_oe_objective(Var ce_loss, Var oe_loss, double lambda_oe);
Var combined_energy_objective(Var ce_loss, Var energy_loss, double lambda_energy);

/// One-hot encoding of integer labels in [0, width).
Matrix one_hot(std::span<const int> labels, Eigen::Index width);

/// Mean cross-entropy on plain logits; used for validation losses.
double cross_entropy_value(const Matrix& logits, std::span<const int> labels);

}  // namespace oodlab
