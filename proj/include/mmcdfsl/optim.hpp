#pragma once

#include <map>
#include <string>

#include "mmcdfsl/models.hpp"

namespace mmcdfsl {

struct OptimizerConfig {
  double peak_lr = 2e-3;
  double min_lr = 1e-6;
  double warmup_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.05;

  void validate() const;
};

/// Linear warm-up over the first warmup_fraction of steps, then cosine decay to min_lr.
double learning_rate(const OptimizerConfig& cfg, long step, long total_steps);

/// Adam with decoupled weight decay. Weight decay applies to parameters named
/// "*weight" only. Parameters whose gradient buffer is empty are skipped
/// entirely (no moment update, no decay).
class AdamW {
 public:
  explicit AdamW(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  /// `params` and `grads` must come from params_of() on structurally identical modules.
  void step(const ParamList& params, const ParamList& grads, double lr);

  const OptimizerConfig& config() const { return cfg_; }

 private:
  struct Slot {
    Mat m, v;
    long t = 0;
  };
  OptimizerConfig cfg_;
  std::map<std::string, Slot> state_;
};

}  // namespace mmcdfsl
