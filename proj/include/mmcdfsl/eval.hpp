#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmcdfsl/fewshot.hpp"
#include "mmcdfsl/synth_data.hpp"

namespace mmcdfsl {

struct EvalConfig {
  int n_way = 5;
  int k_shot = 1;
  int n_query = 15;
  int episodes = 600;
  InferenceConfig inference;
  HeadTrainingConfig head;
  std::uint64_t seed = 0;

  void validate() const;
};

/// 1.96 * sample std / sqrt(n). Zero for fewer than two values.
double ci95_halfwidth(std::span<const double> values);
double mean_of(std::span<const double> values);

struct EvalResult {
  std::vector<double> per_episode_acc;
  std::vector<Episode> episodes;
  double mean_acc = 0.0;
  double ci95 = 0.0;
  EvalConfig config;
};

/// Seeds used for episode e; configurations sharing `seed` see the same episodes and masks.
std::uint64_t episode_seed(std::uint64_t seed, int episode);

/// Returns one predicted episode-local label per query, in Episode::query order.
using EpisodePredictor =
    std::function<std::vector<int>(std::span<const MultimodalSample> pool, const Episode& episode, std::uint64_t seed)>;

/// Samples cfg.episodes episodes and scores each with `predict`. Episode errors propagate.
EvalResult run_episodes(std::span<const MultimodalSample> pool, const EvalConfig& cfg, const EpisodePredictor& predict);

/// Head training on masked support features followed by ensemble masked inference on every query.
/// Support and query masks derive from the episode seed.
EpisodePredictor fewshot_predictor(const FeatureExtractor& extractor, const EvalConfig& cfg);

EvalResult run_evaluation(const FeatureExtractor& extractor, std::span<const MultimodalSample> pool,
                          const EvalConfig& cfg);
EvalResult run_evaluation(const Encoder& encoder, std::span<const MultimodalSample> pool, const EvalConfig& cfg);

struct TradeoffRow {
  double mask_ratio = 0.0;
  int ensemble = 1;
  double mean_acc = 0.0;
  double ci95 = 0.0;
  double wallclock_ms = 0.0;
  double wallclock_std_ms = 0.0;
  double flops = 0.0;
};

/// Encoder hyperparameters recovered from its parameter shapes.
EncoderConfig encoder_config_of(const Encoder& encoder);

/// Cartesian product of ratios x ensembles, ratio-major, all rows on the same episode seeds.
/// Wall clock is measured on the first pool sample with `timing_iters` timed calls.
std::vector<TradeoffRow> tradeoff_sweep(const Encoder& encoder, std::span<const MultimodalSample> pool,
                                        std::span<const double> ratios, std::span<const int> ensembles,
                                        const EvalConfig& cfg, int timing_iters, int timing_warmup = 10);

/// Writes `id,label,f0..f{d-1}` rows of unmasked pooled features, one per sample.
/// Unlabeled samples get an empty label cell. Returns the number of rows.
std::size_t export_embeddings(const Encoder& encoder, std::span<const MultimodalSample> samples,
                              const std::filesystem::path& path, const std::string& config_hash);

}  // namespace mmcdfsl
