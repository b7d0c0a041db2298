#pragma once

#include "oodlab/diffcore.hpp"

#include <vector>

namespace oodlab {

/// Linear warmup to `base_lr` over `warmup_steps`, then inverse square-root
/// decay: base_lr * min(step / warmup, sqrt(warmup / step)), step from 1.
struct NoamSchedule {
  double base_lr = 1e-3;
  long warmup_steps = 1;

  double lr(long step) const;
};

/// Adam with decoupled weight decay.
class AdamW {
 public:
  struct Options {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-4;
  };

  AdamW(const std::vector<Matrix*>& params, Options options);

  void step(const std::vector<Matrix*>& params, const std::vector<Matrix>& grads, double lr);
  long steps() const { return t_; }

 private:
  Options opt_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  long t_ = 0;
};

}  // namespace oodlab
