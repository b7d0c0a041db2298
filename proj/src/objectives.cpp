#include "oodlab/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace oodlab {

void LossWeights::validate() const {
  if (!(lambda_oe >= 0)) throw std::invalid_argument("lambda_oe must be >= 0");
  if (!(lambda_energy >= 0)) throw std::invalid_argument("lambda_energy must be >= 0");
  if (!(temperature > 0)) throw std::invalid_argument("temperature must be > 0");
}

namespace {

void require_label_shape(const char* what, Var logits, const Matrix& labels) {
  if (labels.rows() != logits.rows() || labels.cols() != logits.cols()) {
    throw ShapeError(std::string(what) + ": labels (" + std::to_string(labels.rows()) + "x" +
                     std::to_string(labels.cols()) + ") vs logits (" +
                     std::to_string(logits.rows()) + "x" + std::to_string(logits.cols()) + ")");
  }
}

}  // namespace

Var cross_entropy(Var logits, const Matrix& onehot_labels) {
  require_label_shape("cross_entropy", logits, onehot_labels);
  for (Eigen::Index i = 0; i < onehot_labels.rows(); ++i) {
    int ones = 0;
    for (Eigen::Index c = 0; c < onehot_labels.cols(); ++c) {
      const double y = onehot_labels(i, c);
      if (y == 1.0) {
        ++ones;
      } else if (y != 0.0) {
        ones = -1;
        break;
      }
    }
    if (ones != 1)
      throw std::invalid_argument("cross_entropy: row " + std::to_string(i) + " is not one-hot");
  }
  Graph& g = *logits.graph;
  const double n = static_cast<double>(logits.rows());
  return (-1.0 / n) * sum(hadamard(g.constant(onehot_labels), log_softmax_rows(logits)));
}

Var bce_multi(Var logits, const Matrix& binary_labels) {
  require_label_shape("bce_multi", logits, binary_labels);
  for (Eigen::Index i = 0; i < binary_labels.size(); ++i) {
    const double y = binary_labels.data()[i];
    if (y != 0.0 && y != 1.0) throw std::invalid_argument("bce_multi: labels must be 0 or 1");
  }
  Graph& g = *logits.graph;
  return mean(softplus(logits) - hadamard(g.constant(binary_labels), logits));
}

Var oe_uniform_loss(Var logits) {
  // mean over n*C cells equals (1/n) sum_i (1/C) sum_c.
  return -mean(log_softmax_rows(logits));
}

Var free_energy(Var logits, double temperature) {
  if (!(temperature > 0)) throw std::invalid_argument("free_energy: temperature must be > 0");
  return (-temperature) * logsumexp_rows((1.0 / temperature) * logits);
}

Vector free_energy(const Matrix& logits, double temperature) {
  if (!(temperature > 0)) throw std::invalid_argument("free_energy: temperature must be > 0");
  const Matrix scaled = logits / temperature;
  return -temperature * detail::logsumexp_rows<double>(scaled);
}

Var energy_hinge_loss(Var id_energies, Var ood_energies, const MarginPair& margins) {
  if (id_energies.value().size() == 0 || ood_energies.value().size() == 0)
    throw std::invalid_argument("energy_hinge_loss: empty batch");
  if (!std::isfinite(margins.m_in) || !std::isfinite(margins.m_out))
    throw std::invalid_argument("energy_hinge_loss: margins must be finite");
  Var id_term = mean(square(rectify(id_energies - margins.m_in)));
  Var ood_term = mean(square(rectify(margins.m_out - ood_energies)));
  return id_term + ood_term;
}

double median(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("median: empty input");
  std::vector<double> v(values.begin(), values.end());
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  const double upper = v[mid];
  if (v.size() % 2 == 1) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

MarginPair derive_margins(std::span<const double> val_id_energies,
                          std::span<const double> val_ood_energies) {
  if (val_id_energies.empty() || val_ood_energies.empty())
    throw std::invalid_argument("derive_margins: empty energy array");
  return {median(val_id_energies), median(val_ood_energies)};
}

Var combined_oe_objective(Var ce_loss, Var oe_loss, double lambda_oe) {
  if (!(lambda_oe >= 0)) throw std::invalid_argument("combined_oe_objective: negative lambda");
  return ce_loss + lambda_oe * oe_loss;
}

Var combined_energy_objective(Var ce_loss, Var energy_loss, double lambda_energy) {
  if (!(lambda_energy >= 0))
    throw std::invalid_argument("combined_energy_objective: negative lambda");
  return ce_loss + lambda_energy * energy_loss;
}

Matrix one_hot(std::span<const int> labels, Eigen::Index width) {
  Matrix y = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), width);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= width)
      throw std::invalid_argument("one_hot: label " + std::to_string(labels[i]) + " out of range");
    y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return y;
}

double cross_entropy_value(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<std::size_t>(logits.rows()) != labels.size())
    throw ShapeError("cross_entropy_value: label count mismatch");
  const Vector lse = detail::logsumexp_rows<double>(logits);
  double total = 0.0;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) total += lse(i) - logits(i, labels[i]);
  return total / static_cast<double>(logits.rows());
}

}  // namespace oodlab
