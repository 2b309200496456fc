#include "mmcdfsl/eval.hpp"

#include <cmath>

#include "mmcdfsl/errors.hpp"
#include "mmcdfsl/io.hpp"
#include "mmcdfsl/rng.hpp"

namespace mmcdfsl {

void EvalConfig::validate() const {
  if (n_way < 2) throw ConfigError("nway", "must be >= 2");
  if (k_shot < 1) throw ConfigError("kshot", "must be >= 1");
  if (n_query < 1) throw ConfigError("nquery", "must be >= 1");
  if (episodes < 1) throw ConfigError("episodes", "must be >= 1");
  inference.validate();
  head.validate();
}

double mean_of(std::span<const double> values) {
  if (values.empty()) return 0.0;
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

double ci95_halfwidth(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) return 0.0;
  // Shifting by the first value makes constant input give exactly zero.
  const double shift = values[0];
  double mu = 0.0;
  for (double v : values) mu += v - shift;
  mu /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - shift - mu) * (v - shift - mu);
  return 1.96 * std::sqrt(ss / static_cast<double>(n - 1)) / std::sqrt(static_cast<double>(n));
}

std::uint64_t episode_seed(std::uint64_t seed, int episode) {
  return derive_seed(seed, "episode", {static_cast<std::uint64_t>(episode)});
}

EvalResult run_episodes(std::span<const MultimodalSample> pool, const EvalConfig& cfg, const EpisodePredictor& predict) {
  cfg.validate();
  EvalResult r;
  r.config = cfg;
  r.per_episode_acc.reserve(static_cast<std::size_t>(cfg.episodes));
  for (int e = 0; e < cfg.episodes; ++e) {
    const std::uint64_t es = episode_seed(cfg.seed, e);
    Episode ep = sample_episode(pool, cfg.n_way, cfg.k_shot, cfg.n_query, es);
    const std::vector<int> pred = predict(pool, ep, es);
    if (pred.size() != ep.query.size()) throw ContractError("predictor returned the wrong number of labels");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ep.query_labels[i];
    r.per_episode_acc.push_back(static_cast<double>(correct) / static_cast<double>(pred.size()));
    r.episodes.push_back(std::move(ep));
  }
  r.mean_acc = mean_of(r.per_episode_acc);
  r.ci95 = ci95_halfwidth(r.per_episode_acc);
  return r;
}

EpisodePredictor fewshot_predictor(const FeatureExtractor& extractor, const EvalConfig& cfg) {
  // Every mask is keyed by the episode seed, so episodes are independent draws while
  // configurations that share cfg.seed still see the same masks.
  return [extractor, cfg](std::span<const MultimodalSample> pool, const Episode& ep, std::uint64_t episode_seed) {
    std::vector<const MultimodalSample*> support;
    for (std::size_t i : ep.support) support.push_back(&pool[i]);
    const ClassifierHead head = train_fewshot_head(extractor, support, ep.support_labels, ep.n_way(),
                                                   cfg.inference.mask_ratio, derive_seed(episode_seed, "head"), cfg.head);
    std::vector<int> out;
    out.reserve(ep.query.size());
    for (std::size_t qi = 0; qi < ep.query.size(); ++qi) {
      const MultimodalSample& q = pool[ep.query[qi]];
      InferenceConfig ic = cfg.inference;
      ic.seed = derive_seed(episode_seed, "query", {q.id});
      out.push_back(ensemble_masked_predict(extractor, head, q, ic).argmax);
    }
    return out;
  };
}

EvalResult run_evaluation(const FeatureExtractor& extractor, std::span<const MultimodalSample> pool,
                          const EvalConfig& cfg) {
  return run_episodes(pool, cfg, fewshot_predictor(extractor, cfg));
}

EvalResult run_evaluation(const Encoder& encoder, std::span<const MultimodalSample> pool, const EvalConfig& cfg) {
  return run_evaluation(encoder_features(encoder), pool, cfg);
}

EncoderConfig encoder_config_of(const Encoder& encoder) {
  EncoderConfig c;
  c.embed_dim = encoder.embed_dim();
  c.depth = static_cast<int>(encoder.blocks.size());
  c.tubelet_size = encoder.tubelet_size;
  if (!encoder.blocks.empty()) {
    c.heads = encoder.blocks.front().heads;
    c.mlp_ratio = static_cast<int>(encoder.blocks.front().fc1.weight.cols()) / c.embed_dim;
  }
  return c;
}

std::vector<TradeoffRow> tradeoff_sweep(const Encoder& encoder, std::span<const MultimodalSample> pool,
                                        std::span<const double> ratios, std::span<const int> ensembles,
                                        const EvalConfig& cfg, int timing_iters, int timing_warmup) {
  if (pool.empty()) throw ContractError("tradeoff_sweep: empty pool");
  const EncoderConfig ec = encoder_config_of(encoder);
  const Clip& probe = pool.front().clip(ModalityKind::RGB);
  Rng head_rng(derive_seed(cfg.seed, "timing-head"));
  const ClassifierHead timing_head = init_classifier(ec.embed_dim, cfg.n_way, head_rng);

  std::vector<TradeoffRow> rows;
  for (double rho : ratios) {
    for (int p : ensembles) {
      EvalConfig c = cfg;
      c.inference.mask_ratio = rho;
      c.inference.ensemble = p;
      const EvalResult er = run_evaluation(encoder, pool, c);
      TradeoffRow row;
      row.mask_ratio = rho;
      row.ensemble = p;
      row.mean_acc = er.mean_acc;
      row.ci95 = er.ci95;
      const WallclockStats w = measure_runtime(encoder, timing_head, probe, c.inference, timing_iters, timing_warmup);
      row.wallclock_ms = w.mean_ms;
      row.wallclock_std_ms = w.std_ms;
      row.flops = count_flops(ec, encoder.grid, encoder.patch_volume(), cfg.n_way, rho, p).flops_total;
      rows.push_back(row);
    }
  }
  return rows;
}

std::size_t export_embeddings(const Encoder& encoder, std::span<const MultimodalSample> samples,
                              const std::filesystem::path& path, const std::string& config_hash) {
  const int d = encoder.embed_dim();
  std::vector<std::string> header = {"id", "label"};
  for (int i = 0; i < d; ++i) header.push_back("f" + std::to_string(i));
  std::vector<std::vector<std::string>> rows;
  const TubeMask full = identity_mask(encoder.grid);
  for (const MultimodalSample& s : samples) {
    const Mat f = encode(encoder, s.clip(ModalityKind::RGB), full).pooled;
    std::vector<std::string> row = {std::to_string(s.id), s.label ? std::to_string(*s.label) : ""};
    for (int i = 0; i < d; ++i) row.push_back(io::format_double(f(0, i)));
    rows.push_back(std::move(row));
  }
  io::write_csv(path, config_hash, header, rows);
  return rows.size();
}

}  // namespace mmcdfsl
