#include "mmcdfsl/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mmcdfsl/errors.hpp"
#include "mmcdfsl/rng.hpp"

namespace mmcdfsl {

double default_lambda_ce(ModalityKind kind) { return kind == ModalityKind::RGB ? 0.05 : 0.01; }

void PretrainConfig::validate() const {
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("rho_pretrain", "must lie in [0, 1)");
  if (!(lambda_ce >= 0.0)) throw ConfigError("lambda_ce", "must be >= 0");
  if (epochs < 0) throw ConfigError("pretrain_epochs", "must be >= 0");
  if (batch_size < 1) throw ConfigError("pretrain_batch_size", "must be >= 1");
  optimizer.validate();
}

Mat normalized_patch_targets(const Mat& patches) {
  Mat out(patches.rows(), patches.cols());
  for (Eigen::Index r = 0; r < patches.rows(); ++r) {
    const double mu = patches.row(r).mean();
    const double var = (patches.row(r).array() - mu).square().mean();
    out.row(r) = (patches.row(r).array() - mu) / std::sqrt(var + 1e-6);
  }
  return out;
}

double reconstruction_loss(const Mat& predictions, const Clip& clip, const TubeMask& mask, int tubelet_size) {
  const std::vector<int> masked = mask.masked_indices();
  if (predictions.rows() != static_cast<Eigen::Index>(masked.size()))
    throw ContractError("reconstruction_loss: predictions must cover exactly the masked tokens");
  if (masked.empty()) return 0.0;
  const Mat target = normalized_patch_targets(extract_patches(clip, tubelet_size, masked));
  if (target.cols() != predictions.cols()) throw ContractError("reconstruction_loss: patch volume mismatch");
  return (predictions - target).squaredNorm() / static_cast<double>(target.size());
}

LabelIndex LabelIndex::from_pool(std::span<const MultimodalSample> pool) {
  LabelIndex li;
  for (const MultimodalSample& s : pool)
    if (s.label) li.index.emplace(*s.label, 0);
  int i = 0;
  for (auto& [label, idx] : li.index) idx = i++;
  return li;
}

int LabelIndex::operator()(int label) const {
  const auto it = index.find(label);
  if (it == index.end()) throw ContractError("label " + std::to_string(label) + " is not a known source class");
  return it->second;
}

namespace {

struct SampleTerms {
  double recon = 0.0;
  double ce = 0.0;
  double objective = 0.0;
};

// Builds the per-sample graph, back-propagates `weight_recon * recon + weight_ce * ce`.
SampleTerms sample_objective(const ModalityModel& model, ModalityModel* grads, const MultimodalSample& sample,
                             const PretrainConfig& cfg, std::optional<int> class_index, double weight_recon,
                             double weight_ce, std::uint64_t mask_seed) {
  const Clip& clip = sample.clip(cfg.modality);
  const Encoder& enc = model.encoder;
  check_clip(enc, clip);
  const TubeMask mask = tube_mask(enc.grid, cfg.mask_ratio, mask_seed);
  const std::vector<int> visible = mask.visible_indices();
  const std::vector<int> masked = mask.masked_indices();

  ad::Tape t;
  Encoder* genc = grads ? &grads->encoder : nullptr;
  const EncoderVars ev = encoder_forward(t, enc, genc, extract_patches(clip, enc.tubelet_size, visible), visible);

  std::vector<ad::Var> terms;
  std::vector<double> weights;
  SampleTerms out;

  if (weight_recon != 0.0) {
    const ad::Var pred = decoder_forward(t, model.decoder, grads ? &grads->decoder : nullptr, ev.tokens, mask);
    const Mat target = normalized_patch_targets(extract_patches(clip, enc.tubelet_size, masked));
    const ad::Var recon = ad::mse(pred, target);
    out.recon = recon.scalar();
    terms.push_back(recon);
    weights.push_back(weight_recon);
  }
  if (class_index) {
    // With a zero weight the classifier stays off the gradient path.
    ClassifierHead* gcls = (grads && weight_ce != 0.0) ? &grads->classifier : nullptr;
    const ad::Var pooled = weight_ce != 0.0 ? ev.pooled : ad::stop_gradient(ev.pooled);
    const ad::Var logits = classifier_forward(t, model.classifier, gcls, pooled);
    const int y = *class_index;
    const ad::Var ce = ad::cross_entropy(logits, std::span<const int>(&y, 1));
    out.ce = ce.scalar();
    if (weight_ce != 0.0) {
      terms.push_back(ce);
      weights.push_back(weight_ce);
    }
  }
  if (terms.empty()) return out;
  const ad::Var objective = ad::weighted_sum(terms, weights);
  out.objective = objective.scalar();
  if (!std::isfinite(out.objective)) throw NumericError("non-finite pretraining loss");
  if (grads) t.backward(objective);
  return out;
}

}  // namespace

PretrainLossBreakdown pretrain_loss(const ModalityModel& model, ModalityModel* grads, SampleBatch source_batch,
                                    SampleBatch target_batch, const PretrainConfig& cfg, const LabelIndex& labels,
                                    std::uint64_t step_seed) {
  PretrainLossBreakdown b;
  b.lambda_ce = cfg.lambda_ce;
  const double ns = static_cast<double>(source_batch.size());
  const double nt = static_cast<double>(target_batch.size());

  for (std::size_t j = 0; j < source_batch.size(); ++j) {
    const MultimodalSample& s = *source_batch[j];
    if (!s.label) throw ContractError("source sample " + std::to_string(s.id) + " has no label");
    const SampleTerms st = sample_objective(model, grads, s, cfg, labels(*s.label), 1.0 / ns, cfg.lambda_ce / ns,
                                            derive_seed(step_seed, "source", {j}));
    b.recon_source += st.recon / ns;
    b.ce_source += st.ce / ns;
    b.total += st.objective;
  }
  if (cfg.target_reconstruction) {
    for (std::size_t j = 0; j < target_batch.size(); ++j) {
      const MultimodalSample& s = *target_batch[j];
      if (s.label) throw ContractError("target sample " + std::to_string(s.id) + " carries a label");
      const SampleTerms st =
          sample_objective(model, grads, s, cfg, std::nullopt, 1.0 / nt, 0.0, derive_seed(step_seed, "target", {j}));
      b.recon_target += st.recon / nt;
      b.total += st.objective;
    }
  } else {
    for (const MultimodalSample* s : target_batch)
      if (s->label) throw ContractError("target sample " + std::to_string(s->id) + " carries a label");
  }
  return b;
}

PretrainLossBreakdown pretrain_step(ModalityModel& model, AdamW& optimizer, SampleBatch source_batch,
                                    SampleBatch target_batch, const PretrainConfig& cfg, const LabelIndex& labels,
                                    double lr, std::uint64_t step_seed) {
  ModalityModel grads = empty_grads(model);
  const PretrainLossBreakdown b = pretrain_loss(model, &grads, source_batch, target_batch, cfg, labels, step_seed);
  optimizer.step(params_of(model), params_of(grads), lr);
  return b;
}

void run_pretrain(ModalityModel& model, std::span<const MultimodalSample> source,
                  std::span<const MultimodalSample> target_unlabeled, const PretrainConfig& cfg,
                  const PretrainLogger& log) {
  cfg.validate();
  if (cfg.epochs == 0) return;
  if (source.empty()) throw ContractError("run_pretrain: empty source pool");
  if (cfg.target_reconstruction && target_unlabeled.empty()) throw ContractError("run_pretrain: empty target pool");

  const LabelIndex labels = LabelIndex::from_pool(source);
  if (labels.size() != model.classifier.n_classes())
    throw ContractError("classifier has " + std::to_string(model.classifier.n_classes()) + " outputs, source has " +
                        std::to_string(labels.size()) + " classes");

  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (source.size() + bs - 1) / bs;
  const long total_steps = static_cast<long>(steps_per_epoch) * cfg.epochs;
  AdamW optimizer(cfg.optimizer);

  std::vector<std::size_t> src_order(source.size()), tgt_order(target_unlabeled.size());
  std::size_t tgt_cursor = tgt_order.size();
  int tgt_pass = 0;
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(src_order.begin(), src_order.end(), std::size_t{0});
    Rng(derive_seed(cfg.seed, "pretrain-order", {static_cast<std::uint64_t>(epoch)}))
        .shuffle(src_order.begin(), src_order.end());
    for (std::size_t b0 = 0; b0 < source.size(); b0 += bs) {
      std::vector<const MultimodalSample*> src_batch, tgt_batch;
      for (std::size_t i = b0; i < std::min(source.size(), b0 + bs); ++i) src_batch.push_back(&source[src_order[i]]);
      // Equal-sized target batch, cycling through a reshuffled pass when exhausted.
      while (cfg.target_reconstruction && tgt_batch.size() < src_batch.size()) {
        if (tgt_cursor == tgt_order.size()) {
          std::iota(tgt_order.begin(), tgt_order.end(), std::size_t{0});
          Rng(derive_seed(cfg.seed, "pretrain-target-order", {static_cast<std::uint64_t>(tgt_pass++)}))
              .shuffle(tgt_order.begin(), tgt_order.end());
          tgt_cursor = 0;
        }
        tgt_batch.push_back(&target_unlabeled[tgt_order[tgt_cursor++]]);
      }
      const double lr = learning_rate(cfg.optimizer, step, total_steps);
      PretrainLossBreakdown loss;
      try {
        loss = pretrain_step(model, optimizer, src_batch, tgt_batch, cfg, labels, lr,
                             derive_seed(cfg.seed, "pretrain-step", {static_cast<std::uint64_t>(step)}));
      } catch (const NumericError& e) {
        throw NumericError("pretrain " + std::string(to_string(cfg.modality)) + " diverged at step " +
                           std::to_string(step) + ": " + e.what());
      }
      if (log) log({step, epoch, lr, loss});
      ++step;
    }
  }
}

double source_accuracy(const ModalityModel& model, std::span<const MultimodalSample> pool, const LabelIndex& labels,
                       double mask_ratio, std::uint64_t seed) {
  if (pool.empty()) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const MultimodalSample& s = pool[i];
    const Clip& clip = s.clip(model.encoder.modality.kind);
    const TubeMask mask = tube_mask(model.encoder.grid, mask_ratio, derive_seed(seed, "source-acc", {i}));
    const Mat logits = classify(model.classifier, encode(model.encoder, clip, mask).pooled);
    Eigen::Index arg = 0;
    logits.row(0).maxCoeff(&arg);
    correct += s.label && static_cast<int>(arg) == labels(*s.label);
  }
  return static_cast<double>(correct) / static_cast<double>(pool.size());
}

}  // namespace mmcdfsl
