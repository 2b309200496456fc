#include "mmcdfsl/optim.hpp"

#include <cmath>
#include <numbers>

#include "mmcdfsl/errors.hpp"

namespace mmcdfsl {

void OptimizerConfig::validate() const {
  if (!(peak_lr > 0.0)) throw ConfigError("peak_lr", "must be > 0");
  if (!(min_lr >= 0.0 && min_lr <= peak_lr)) throw ConfigError("min_lr", "must lie in [0, peak_lr]");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup_fraction", "must lie in [0, 1)");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1", "must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2", "must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("eps", "must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay", "must be >= 0");
}

double learning_rate(const OptimizerConfig& cfg, long step, long total_steps) {
  if (total_steps <= 0) return cfg.peak_lr;
  const long warmup = static_cast<long>(std::floor(cfg.warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return cfg.peak_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const long span = std::max(1L, total_steps - warmup - 1);
  const double progress = std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(span));
  return cfg.min_lr + 0.5 * (cfg.peak_lr - cfg.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

void AdamW::step(const ParamList& params, const ParamList& grads, double lr) {
  if (params.size() != grads.size()) throw ContractError("AdamW::step: parameter/gradient count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat& g = *grads[i].value;
    if (g.size() == 0) continue;
    Mat& p = *params[i].value;
    if (g.rows() != p.rows() || g.cols() != p.cols())
      throw ContractError("AdamW::step: gradient shape mismatch for " + params[i].name);
    if (!g.allFinite()) throw NumericError("non-finite gradient for " + params[i].name);

    Slot& s = state_[params[i].name];
    if (s.t == 0) {
      s.m = Mat::Zero(p.rows(), p.cols());
      s.v = Mat::Zero(p.rows(), p.cols());
    }
    ++s.t;
    s.m = cfg_.beta1 * s.m + (1.0 - cfg_.beta1) * g;
    s.v = cfg_.beta2 * s.v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(s.t));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(s.t));

    const std::string& name = params[i].name;
    const bool decay = name.size() >= 6 && name.compare(name.size() - 6, 6, "weight") == 0;
    if (decay) p *= 1.0 - lr * cfg_.weight_decay;
    p.array() -= lr * (s.m.array() / bc1) / ((s.v.array() / bc2).sqrt() + cfg_.eps);
  }
}

}  // namespace mmcdfsl
