#include "mmcdfsl/fewshot.hpp"

#include <chrono>
#include <cmath>
#include <string>

#include "mmcdfsl/errors.hpp"
#include "mmcdfsl/rng.hpp"

namespace mmcdfsl {

void InferenceConfig::validate() const {
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("rho_infer", "must lie in [0, 1)");
  if (ensemble < 1) throw ConfigError("ensemble", "must be >= 1");
}

void HeadTrainingConfig::validate() const {
  if (iterations < 0) throw ConfigError("head_iterations", "must be >= 0");
  if (mask_refreshes < 1) throw ConfigError("head_mask_refreshes", "must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("head_lr", "must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("head_weight_decay", "must be >= 0");
}

FeatureExtractor encoder_features(const Encoder& encoder) {
  return {encoder.grid, encoder.embed_dim(), [&encoder](const MultimodalSample& s, const TubeMask& mask) {
            return encode(encoder, s.clip(ModalityKind::RGB), mask).pooled;
          }};
}

ClassifierHead fit_linear_head(ClassifierHead head, const Mat& features, std::span<const int> labels,
                               const HeadTrainingConfig& cfg, int iterations) {
  if (features.rows() != static_cast<Eigen::Index>(labels.size()) || features.rows() == 0)
    throw ContractError("fit_linear_head: need one label per feature row");
  for (int it = 0; it < iterations; ++it) {
    ad::Tape t;
    ClassifierHead g = empty_grads(head);
    const ad::Var logits = classifier_forward(t, head, &g, t.constant(features));
    t.backward(ad::cross_entropy(logits, labels));
    head.fc.weight -= cfg.learning_rate * (g.fc.weight + cfg.weight_decay * head.fc.weight);
    head.fc.bias -= cfg.learning_rate * g.fc.bias;
  }
  return head;
}

ClassifierHead train_fewshot_head(const FeatureExtractor& extractor, std::span<const MultimodalSample* const> support,
                                  std::span<const int> labels, int n_way, double mask_ratio, std::uint64_t seed,
                                  const HeadTrainingConfig& cfg) {
  cfg.validate();
  if (support.empty()) throw ContractError("train_fewshot_head: empty support set");
  if (support.size() != labels.size()) throw ContractError("train_fewshot_head: label count mismatch");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("rho_infer", "must lie in [0, 1)");
  for (int y : labels)
    if (y < 0 || y >= n_way) throw ContractError("train_fewshot_head: label outside [0, n_way)");

  Rng init_rng(derive_seed(seed, "head-init"));
  ClassifierHead head = init_classifier(extractor.dim, n_way, init_rng);

  Mat features(static_cast<Eigen::Index>(support.size()), extractor.dim);
  for (int r = 0; r < cfg.mask_refreshes; ++r) {
    // An identity mask never changes, so features are computed once at ratio 0.
    if (r == 0 || mask_ratio > 0.0) {
      for (std::size_t i = 0; i < support.size(); ++i) {
        const TubeMask mask =
            tube_mask(extractor.grid, mask_ratio, derive_seed(seed, "support-mask", {static_cast<std::uint64_t>(r), support[i]->id}));
        features.row(static_cast<Eigen::Index>(i)) = extractor.features(*support[i], mask).row(0);
      }
    }
    const int begin = cfg.iterations * r / cfg.mask_refreshes;
    const int end = cfg.iterations * (r + 1) / cfg.mask_refreshes;
    head = fit_linear_head(std::move(head), features, labels, cfg, end - begin);
  }
  return head;
}

ClassifierHead train_fewshot_head(const Encoder& encoder, std::span<const MultimodalSample* const> support,
                                  std::span<const int> labels, int n_way, double mask_ratio, std::uint64_t seed,
                                  const HeadTrainingConfig& cfg) {
  return train_fewshot_head(encoder_features(encoder), support, labels, n_way, mask_ratio, seed, cfg);
}

std::uint64_t member_mask_seed(std::uint64_t seed, int member) {
  return derive_seed(seed, "ensemble-member", {static_cast<std::uint64_t>(member)});
}

Prediction ensemble_masked_predict(const FeatureExtractor& extractor, const ClassifierHead& head,
                                   const MultimodalSample& sample, const InferenceConfig& cfg) {
  cfg.validate();
  struct Group {
    TubeMask mask;
    Mat probs;
    int count = 0;
  };
  std::vector<Group> groups;
  for (int p = 0; p < cfg.ensemble; ++p) {
    TubeMask mask = tube_mask(extractor.grid, cfg.mask_ratio, member_mask_seed(cfg.seed, p));
    const Mat probs = ad::softmax_rows(classify(head, extractor.features(sample, mask)));
    bool merged = false;
    for (Group& g : groups)
      if (g.mask.kept_spatial == mask.kept_spatial) {
        ++g.count;
        merged = true;
        break;
      }
    if (!merged) groups.push_back({std::move(mask), probs, 1});
  }
  Prediction out;
  out.probs = Mat::Zero(1, head.n_classes());
  for (const Group& g : groups) out.probs += (static_cast<double>(g.count) / cfg.ensemble) * g.probs;
  Eigen::Index arg = 0;
  out.probs.row(0).maxCoeff(&arg);
  out.argmax = static_cast<int>(arg);
  return out;
}

Prediction ensemble_masked_predict(const Encoder& encoder, const ClassifierHead& head, const Clip& rgb_clip,
                                   const InferenceConfig& cfg) {
  check_clip(encoder, rgb_clip);
  MultimodalSample s;
  s.clips.emplace(rgb_clip.modality.kind, rgb_clip);
  return ensemble_masked_predict(
      FeatureExtractor{encoder.grid, encoder.embed_dim(),
                       [&encoder, &rgb_clip](const MultimodalSample&, const TubeMask& mask) {
                         return encode(encoder, rgb_clip, mask).pooled;
                       }},
      head, s, cfg);
}

CostReport count_flops(const EncoderConfig& cfg, const TokenGrid& grid, int patch_volume, int n_classes,
                       double mask_ratio, int ensemble) {
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("rho_infer", "must lie in [0, 1)");
  if (ensemble < 1) throw ConfigError("ensemble", "must be >= 1");
  CostReport r;
  r.mask_ratio = mask_ratio;
  r.ensemble = ensemble;
  r.tokens_full = grid.total();
  r.tokens_visible = grid.temporal_slices * kept_spatial_count(grid.spatial(), mask_ratio);
  const double n = r.tokens_visible;
  const double d = cfg.embed_dim;
  const double depth = cfg.depth;
  // Per block: QKV (3d^2), output projection (d^2), MLP (2 r d^2) multiply-accumulates per token.
  const double per_token_block = d * d * (3.0 + 1.0 + 2.0 * cfg.mlp_ratio);
  const double member_linear = 2.0 * n * patch_volume * d + depth * 2.0 * n * per_token_block;
  // QK^T and AV each take n^2 d multiply-accumulates.
  const double member_quadratic = depth * 2.0 * (2.0 * n * n * d);
  r.flops_linear = ensemble * member_linear;
  r.flops_attention_quadratic = ensemble * member_quadratic;
  r.flops_head = 2.0 * d * n_classes;
  r.flops_total = r.flops_linear + r.flops_attention_quadratic + r.flops_head;
  return r;
}

WallclockStats measure_wallclock(const std::function<void()>& fn, int iters, int warmup,
                                 const std::function<double()>& now_ms) {
  if (iters < 1) throw ConfigError("timing_iters", "must be >= 1");
  const std::function<double()> clock = now_ms ? now_ms : [] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now().time_since_epoch()).count();
  };
  for (int i = 0; i < warmup; ++i) fn();
  std::vector<double> times(static_cast<std::size_t>(iters));
  for (int i = 0; i < iters; ++i) {
    const double t0 = clock();
    fn();
    times[static_cast<std::size_t>(i)] = clock() - t0;
  }
  WallclockStats s;
  s.iters = iters;
  for (double t : times) s.mean_ms += t;
  s.mean_ms /= iters;
  double var = 0.0;
  for (double t : times) var += (t - s.mean_ms) * (t - s.mean_ms);
  s.std_ms = iters > 1 ? std::sqrt(var / (iters - 1)) : 0.0;
  return s;
}

WallclockStats measure_runtime(const Encoder& encoder, const ClassifierHead& head, const Clip& rgb_clip,
                               const InferenceConfig& cfg, int iters, int warmup) {
  double sink = 0.0;
  const WallclockStats s = measure_wallclock(
      [&] { sink += ensemble_masked_predict(encoder, head, rgb_clip, cfg).probs(0, 0); }, iters, warmup);
  if (!std::isfinite(sink)) throw NumericError("non-finite prediction while timing");
  return s;
}

}  // namespace mmcdfsl
