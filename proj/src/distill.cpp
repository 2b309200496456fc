#include "mmcdfsl/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "mmcdfsl/errors.hpp"
#include "mmcdfsl/rng.hpp"

namespace mmcdfsl {

double DistillConfig::weight(ModalityKind kind) const {
  const auto it = weights.find(kind);
  return it == weights.end() ? 1.0 : it->second;
}

void DistillConfig::validate() const {
  if (std::find(modalities.begin(), modalities.end(), ModalityKind::RGB) == modalities.end())
    throw ConfigError("modalities", "RGB must be distilled (self-distillation regularizer)");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("rho_distill", "must lie in [0, 1)");
  if (epochs < 0) throw ConfigError("distill_epochs", "must be >= 0");
  if (batch_size < 1) throw ConfigError("distill_batch_size", "must be >= 1");
  for (const auto& [kind, w] : weights)
    if (!(w >= 0.0)) throw ConfigError("distill_weight_" + std::string(to_string(kind)), "must be >= 0");
  optimizer.validate();
}

Mat teacher_feature(const Encoder& teacher, const Clip& clip, const TubeMask& mask) {
  return encode(teacher, clip, mask).pooled;
}

Mat student_projection(const Encoder& student, const ProjectionHead& projection, const Clip& rgb_clip,
                       const TubeMask& mask) {
  if (rgb_clip.modality.kind != ModalityKind::RGB) throw ContractError("student_projection expects an RGB clip");
  return project(projection, encode(student, rgb_clip, mask).pooled);
}

DistillLossBreakdown distill_loss(const std::map<ModalityKind, Mat>& teacher_features,
                                  const std::map<ModalityKind, Mat>& predicted_features) {
  if (teacher_features.size() != predicted_features.size())
    throw ContractError("distill_loss: modality sets differ");
  DistillLossBreakdown b;
  for (const auto& [kind, f] : teacher_features) {
    const auto it = predicted_features.find(kind);
    if (it == predicted_features.end())
      throw ContractError("distill_loss: no prediction for " + std::string(to_string(kind)));
    if (it->second.rows() != f.rows() || it->second.cols() != f.cols())
      throw ContractError("distill_loss: feature shape mismatch for " + std::string(to_string(kind)));
    const double d = (f - it->second).squaredNorm();
    b.fd[kind] = d;
    b.weights[kind] = 1.0;
    b.total += d;
  }
  return b;
}

StudentModel init_student(const EncoderConfig& cfg, const Encoder& rgb_teacher, std::span<const ModalityKind> modalities,
                          std::uint64_t seed) {
  if (rgb_teacher.modality.kind != ModalityKind::RGB) throw ContractError("student must start from the RGB teacher");
  StudentModel s;
  s.encoder = rgb_teacher;
  for (ModalityKind kind : modalities) {
    Rng rng(derive_seed(seed, "projection", {static_cast<std::uint64_t>(kind)}));
    s.projections.emplace(kind, init_projection(cfg, rng));
  }
  return s;
}

DistillLossBreakdown distill_objective(const StudentModel& student, StudentModel* student_grads,
                                       const TeacherSet& teachers, TeacherSet* teacher_grads, SampleBatch batch,
                                       const DistillConfig& cfg, std::uint64_t step_seed) {
  cfg.validate();
  DistillLossBreakdown b;
  for (ModalityKind kind : cfg.modalities) {
    if (!teachers.contains(kind)) throw ContractError("no teacher for " + std::string(to_string(kind)));
    if (!student.projections.contains(kind))
      throw ContractError("no projection head for " + std::string(to_string(kind)));
    if (teachers.at(kind).modality.kind != kind) throw ContractError("teacher modality mismatch");
    b.fd[kind] = 0.0;
    b.weights[kind] = cfg.weight(kind);
  }
  if (batch.empty()) return b;
  const double n = static_cast<double>(batch.size());

  for (std::size_t j = 0; j < batch.size(); ++j) {
    const MultimodalSample& s = *batch[j];
    if (s.label) throw ContractError("distillation received labeled sample " + std::to_string(s.id));

    ad::Tape t;
    const Clip& rgb = s.clip(ModalityKind::RGB);
    const TubeMask smask = tube_mask(student.encoder.grid, cfg.mask_ratio, derive_seed(step_seed, "student", {j}));
    const EncoderVars sv =
        encoder_forward(t, student.encoder, student_grads ? &student_grads->encoder : nullptr, rgb, smask);

    std::vector<ad::Var> terms;
    std::vector<double> weights;
    for (ModalityKind kind : cfg.modalities) {
      const Encoder& teacher = teachers.at(kind);
      const TubeMask tmask =
          tube_mask(teacher.grid, cfg.mask_ratio, derive_seed(step_seed, "teacher", {static_cast<std::uint64_t>(kind), j}));
      Encoder* tg = teacher_grads ? &teacher_grads->at(kind) : nullptr;
      const ad::Var f = ad::stop_gradient(encoder_forward(t, teacher, tg, s.clip(kind), tmask).pooled);

      ProjectionHead* pg = student_grads ? &student_grads->projections.at(kind) : nullptr;
      const ad::Var f_hat = projection_forward(t, student.projections.at(kind), pg, sv.pooled);
      const ad::Var fd = ad::squared_distance(f, f_hat);
      b.fd[kind] += fd.scalar() / n;
      terms.push_back(fd);
      weights.push_back(cfg.weight(kind) / n);
    }
    const ad::Var objective = ad::weighted_sum(terms, weights);
    if (!std::isfinite(objective.scalar())) throw NumericError("non-finite distillation loss");
    b.total += objective.scalar();
    if (student_grads || teacher_grads) t.backward(objective);
  }
  return b;
}

DistillLossBreakdown distill_step(StudentModel& student, AdamW& optimizer, const TeacherSet& teachers,
                                  SampleBatch batch, const DistillConfig& cfg, double lr, std::uint64_t step_seed) {
  StudentModel grads = empty_grads(student);
  const DistillLossBreakdown b = distill_objective(student, &grads, teachers, nullptr, batch, cfg, step_seed);
  optimizer.step(params_of(student), params_of(grads), lr);
  return b;
}

void run_distill(StudentModel& student, const TeacherSet& teachers, std::span<const MultimodalSample> target_unlabeled,
                 const DistillConfig& cfg, const DistillLogger& log) {
  cfg.validate();
  if (cfg.epochs == 0) return;
  if (target_unlabeled.empty()) throw ContractError("run_distill: empty target pool");
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t steps_per_epoch = (target_unlabeled.size() + bs - 1) / bs;
  const long total_steps = static_cast<long>(steps_per_epoch) * cfg.epochs;
  AdamW optimizer(cfg.optimizer);
  std::vector<std::size_t> order(target_unlabeled.size());
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng(derive_seed(cfg.seed, "distill-order", {static_cast<std::uint64_t>(epoch)})).shuffle(order.begin(), order.end());
    for (std::size_t b0 = 0; b0 < order.size(); b0 += bs) {
      std::vector<const MultimodalSample*> batch;
      for (std::size_t i = b0; i < std::min(order.size(), b0 + bs); ++i) batch.push_back(&target_unlabeled[order[i]]);
      const double lr = learning_rate(cfg.optimizer, step, total_steps);
      DistillLossBreakdown loss;
      try {
        loss = distill_step(student, optimizer, teachers, batch, cfg, lr,
                            derive_seed(cfg.seed, "distill-step", {static_cast<std::uint64_t>(step)}));
      } catch (const NumericError& e) {
        throw NumericError("distillation diverged at step " + std::to_string(step) + ": " + e.what());
      }
      if (log) log({step, epoch, lr, loss});
      ++step;
    }
  }
}

}  // namespace mmcdfsl
