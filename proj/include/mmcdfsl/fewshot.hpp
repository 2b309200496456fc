#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mmcdfsl/masking.hpp"
#include "mmcdfsl/models.hpp"
#include "mmcdfsl/synth_data.hpp"

namespace mmcdfsl {

struct InferenceConfig {
  double mask_ratio = 0.75;  // rho_infer
  int ensemble = 2;          // P
  std::uint64_t seed = 0;

  /// Throws ConfigError on ratio outside [0, 1) or ensemble < 1.
  void validate() const;
};

struct Prediction {
  Mat probs;  // 1 x N, on the probability simplex
  int argmax = 0;
};

/// Full-batch gradient descent on cross-entropy. Support masks are re-drawn
/// `mask_refreshes` times, spreading `iterations` evenly across the refreshes
/// (equal values give a fresh mask per sample at every iteration).
struct HeadTrainingConfig {
  int iterations = 100;
  int mask_refreshes = 100;
  double learning_rate = 0.01;
  double weight_decay = 1e-4;

  void validate() const;
};

/// Frozen feature extractor: pooled 1 x dim feature of a sample under a tube mask.
struct FeatureExtractor {
  TokenGrid grid;
  int dim = 0;
  std::function<Mat(const MultimodalSample&, const TubeMask&)> features;
};

/// Pooled features of the sample's RGB clip through `encoder` (held by reference).
FeatureExtractor encoder_features(const Encoder& encoder);

/// Gradient descent on fixed features, starting from `head`.
ClassifierHead fit_linear_head(ClassifierHead head, const Mat& features, std::span<const int> labels,
                               const HeadTrainingConfig& cfg, int iterations);

/// Trains a fresh d -> n_way head on tube-masked support features. The mask of support
/// sample s at refresh r depends only on (seed, r, s.id). Throws ContractError on empty support.
ClassifierHead train_fewshot_head(const FeatureExtractor& extractor, std::span<const MultimodalSample* const> support,
                                  std::span<const int> labels, int n_way, double mask_ratio, std::uint64_t seed,
                                  const HeadTrainingConfig& cfg = {});
ClassifierHead train_fewshot_head(const Encoder& encoder, std::span<const MultimodalSample* const> support,
                                  std::span<const int> labels, int n_way, double mask_ratio, std::uint64_t seed,
                                  const HeadTrainingConfig& cfg = {});

/// Member p uses tube_mask(grid, ratio, member_mask_seed(seed, p)).
std::uint64_t member_mask_seed(std::uint64_t seed, int member);

/// Mean of softmax(head(features)) over P tube-masked views. Members with identical
/// masks are evaluated once and weighted by their multiplicity.
Prediction ensemble_masked_predict(const FeatureExtractor& extractor, const ClassifierHead& head,
                                   const MultimodalSample& sample, const InferenceConfig& cfg);
Prediction ensemble_masked_predict(const Encoder& encoder, const ClassifierHead& head, const Clip& rgb_clip,
                                   const InferenceConfig& cfg);

struct CostReport {
  double mask_ratio = 0.0;
  int ensemble = 1;
  int tokens_full = 0;
  int tokens_visible = 0;              // per member
  double flops_linear = 0.0;           // all members: patch embed + QKV/proj/MLP
  double flops_attention_quadratic = 0.0;  // all members: QK^T and AV
  double flops_head = 0.0;             // once
  double flops_total = 0.0;
  double wallclock_mean_ms = 0.0;
  double wallclock_std_ms = 0.0;
  int wallclock_iters = 0;
};

/// Analytic FLOPs with multiply-accumulate = 2 FLOPs; softmax and norms not counted.
CostReport count_flops(const EncoderConfig& cfg, const TokenGrid& grid, int patch_volume, int n_classes,
                       double mask_ratio, int ensemble);

struct WallclockStats {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  int iters = 0;
};

/// Runs `warmup` untimed calls, then times `iters` calls of `fn` with `now_ms`.
WallclockStats measure_wallclock(const std::function<void()>& fn, int iters, int warmup,
                                 const std::function<double()>& now_ms = {});

/// Wall time of one ensemble_masked_predict call (tokenization through probabilities).
WallclockStats measure_runtime(const Encoder& encoder, const ClassifierHead& head, const Clip& rgb_clip,
                               const InferenceConfig& cfg, int iters = 600, int warmup = 10);

}  // namespace mmcdfsl
