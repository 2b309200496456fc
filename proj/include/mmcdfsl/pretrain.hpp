#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "mmcdfsl/models.hpp"
#include "mmcdfsl/optim.hpp"
#include "mmcdfsl/synth_data.hpp"

namespace mmcdfsl {

/// total = recon_source + recon_target + lambda_ce * ce_source. `total` is the
/// value of the differentiated objective, accumulated from the tapes.
struct PretrainLossBreakdown {
  double recon_source = 0.0;
  double recon_target = 0.0;
  double ce_source = 0.0;
  double lambda_ce = 0.0;
  double total = 0.0;

  /// recon_source + recon_target + lambda_ce * ce_source, from the components.
  double combined() const { return recon_source + recon_target + lambda_ce * ce_source; }
};

/// 0.05 for RGB, 0.01 for FLOW and POSE.
double default_lambda_ce(ModalityKind kind);

struct PretrainConfig {
  ModalityKind modality = ModalityKind::RGB;
  double lambda_ce = 0.05;
  double mask_ratio = 0.9;
  int epochs = 30;
  int batch_size = 8;
  /// false drops the target reconstruction term (source-only pretraining).
  bool target_reconstruction = true;
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Zero-mean, unit-variance normalization of each row (one patch per row).
Mat normalized_patch_targets(const Mat& patches);

/// MSE between predictions for the masked tokens and their normalized pixels,
/// averaged over tokens and patch elements. 0 when nothing is masked.
double reconstruction_loss(const Mat& predictions, const Clip& clip, const TubeMask& mask, int tubelet_size);

/// Maps global source class ids to classifier rows (sorted order).
struct LabelIndex {
  std::map<int, int> index;
  static LabelIndex from_pool(std::span<const MultimodalSample> pool);
  int operator()(int label) const;
  int size() const { return static_cast<int>(index.size()); }
};

using SampleBatch = std::span<const MultimodalSample* const>;

/// Forward + backward of the pretraining objective on one batch pair.
/// Gradients are added into `grads` (an empty_grads() structure) when non-null.
/// Fresh tube masks per sample are derived from `step_seed`.
/// Throws ContractError if a target sample carries a label or a source sample lacks one.
PretrainLossBreakdown pretrain_loss(const ModalityModel& model, ModalityModel* grads, SampleBatch source_batch,
                                    SampleBatch target_batch, const PretrainConfig& cfg, const LabelIndex& labels,
                                    std::uint64_t step_seed);

/// One AdamW update from the total-loss gradient.
PretrainLossBreakdown pretrain_step(ModalityModel& model, AdamW& optimizer, SampleBatch source_batch,
                                    SampleBatch target_batch, const PretrainConfig& cfg, const LabelIndex& labels,
                                    double lr, std::uint64_t step_seed);

struct PretrainLogRow {
  long step = 0;
  int epoch = 0;
  double lr = 0.0;
  PretrainLossBreakdown loss;
};
using PretrainLogger = std::function<void(const PretrainLogRow&)>;

/// Trains one modality teacher in place. Zero epochs leave `model` untouched.
/// Throws NumericError (with modality and step) on divergence.
void run_pretrain(ModalityModel& model, std::span<const MultimodalSample> source,
                  std::span<const MultimodalSample> target_unlabeled, const PretrainConfig& cfg,
                  const PretrainLogger& log = {});

/// Fraction of samples whose classifier argmax matches the label, under tube masks at `mask_ratio`.
double source_accuracy(const ModalityModel& model, std::span<const MultimodalSample> pool, const LabelIndex& labels,
                       double mask_ratio, std::uint64_t seed);

}  // namespace mmcdfsl
