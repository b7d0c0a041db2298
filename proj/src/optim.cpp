#include "oodlab/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oodlab {

double NoamSchedule::lr(long step) const {
  const double s = static_cast<double>(std::max(step, 1L));
  const double w = static_cast<double>(std::max(warmup_steps, 1L));
  return base_lr * std::min(s / w, std::sqrt(w / s));
}

AdamW::AdamW(const std::vector<Matrix*>& params, Options options) : opt_(options) {
  for (const Matrix* p : params) {
    m_.push_back(Matrix::Zero(p->rows(), p->cols()));
    v_.push_back(Matrix::Zero(p->rows(), p->cols()));
  }
}

void AdamW::step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads, double lr) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw std::invalid_argument("AdamW::step: parameter count changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Matrix& p = *params[i];
    const Matrix& g = grads[i];
    p *= 1.0 - lr * opt_.weight_decay;
    m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g;
    v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g.cwiseAbs2();
    p.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opt_.eps);
  }
}

}  // namespace oodlab
