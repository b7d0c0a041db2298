#include "oodlab/alm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oodlab {

void AlmConfig::validate() const {
  if (!(alpha > 0 && alpha < 1)) throw std::invalid_argument("alm: alpha must be in (0, 1)");
  if (!(eta_lambda > 0)) throw std::invalid_argument("alm: eta_lambda must be > 0");
  if (!(beta_init > 0)) throw std::invalid_argument("alm: beta_init must be > 0");
  if (!(beta_max >= beta_init)) throw std::invalid_argument("alm: beta_max must be >= beta_init");
  if (!(beta_growth > 1)) throw std::invalid_argument("alm: beta_growth must be > 1");
  if (!std::isfinite(tau)) throw std::invalid_argument("alm: tau must be finite");
}

AlmState AlmState::initial(const AlmConfig& config) {
  config.validate();
  AlmState s;
  s.beta1 = config.beta_init;
  s.beta2 = config.beta_init;
  return s;
}

bool AlmState::valid(const AlmConfig& config) const {
  auto beta_ok = [&](double b) { return b >= config.beta_init && b <= config.beta_max; };
  return lambda1 >= 0 && lambda2 >= 0 && beta_ok(beta1) && beta_ok(beta2);
}

double alm_penalty(double c, double lambda, double beta) {
  const double hinge = std::max(0.0, c);
  return lambda * c + 0.5 * beta * hinge * hinge;
}

Var alm_objective(Var wild_loss, Var id_false_alarm_loss, Var cls_loss, const AlmState& state,
                  const AlmConfig& config) {
  if (!state.valid(config)) throw std::invalid_argument("alm_objective: invalid ALM state");
  auto penalty = [](Var c, double lambda, double beta) {
    return lambda * c + (0.5 * beta) * square(rectify(c));
  };
  Var c1 = id_false_alarm_loss - config.alpha;
  Var c2 = cls_loss - config.tau;
  return wild_loss + penalty(c1, state.lambda1, state.beta1) +
         penalty(c2, state.lambda2, state.beta2);
}

AlmState alm_epoch_update(const AlmState& state, double measured_c1, double measured_c2,
                          const AlmConfig& config) {
  AlmState next = state;
  next.c1 = measured_c1;
  next.c2 = measured_c2;
  next.lambda1 = std::max(0.0, state.lambda1 + config.eta_lambda * measured_c1);
  next.lambda2 = std::max(0.0, state.lambda2 + config.eta_lambda * measured_c2);
  if (measured_c1 > 0) next.beta1 = std::min(state.beta1 * config.beta_growth, config.beta_max);
  if (measured_c2 > 0) next.beta2 = std::min(state.beta2 * config.beta_growth, config.beta_max);
  return next;
}

Var ood_detector_loss(Var energies, Side target_side, double threshold) {
  if (energies.value().size() == 0) throw std::invalid_argument("ood_detector_loss: empty batch");
  Var margin = target_side == Side::in ? energies - threshold : threshold - energies;
  return mean(softplus(margin));
}

double ood_detector_loss(const Vector& energies, Side target_side, double threshold) {
  if (energies.size() == 0) throw std::invalid_argument("ood_detector_loss: empty batch");
  double total = 0.0;
  for (double e : energies) {
    const double m = target_side == Side::in ? e - threshold : threshold - e;
    total += detail::softplus(m);
  }
  return total / static_cast<double>(energies.size());
}

}  // namespace oodlab
