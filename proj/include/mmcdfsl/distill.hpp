#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "mmcdfsl/models.hpp"
#include "mmcdfsl/optim.hpp"
#include "mmcdfsl/pretrain.hpp"
#include "mmcdfsl/synth_data.hpp"

namespace mmcdfsl {

/// Per-modality feature distances and their weighted sum (unit weights by default).
struct DistillLossBreakdown {
  std::map<ModalityKind, double> fd;
  std::map<ModalityKind, double> weights;
  /// Value of the differentiated objective, accumulated from the tapes.
  double total = 0.0;

  /// Weighted sum of `fd`, recomputed from the components.
  double combined() const {
    double s = 0.0;
    for (const auto& [kind, d] : fd) s += (weights.contains(kind) ? weights.at(kind) : 1.0) * d;
    return s;
  }
};

struct DistillConfig {
  std::vector<ModalityKind> modalities = {ModalityKind::RGB, ModalityKind::FLOW, ModalityKind::POSE};
  double mask_ratio = 0.75;
  int epochs = 30;
  int batch_size = 2;
  std::map<ModalityKind, double> weights;  // missing entries mean 1.0
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;

  double weight(ModalityKind kind) const;
  /// Throws ConfigError unless RGB is among the modalities.
  void validate() const;
};

using TeacherSet = std::map<ModalityKind, Encoder>;

/// Pooled feature of the tube-masked clip; teacher parameters never receive gradient.
Mat teacher_feature(const Encoder& teacher, const Clip& clip, const TubeMask& mask);

/// M_m(pooled student encoding of the masked RGB clip).
Mat student_projection(const Encoder& student, const ProjectionHead& projection, const Clip& rgb_clip,
                       const TubeMask& mask);

/// ||f_m - f_hat_m||^2 per modality; total is their sum. Throws ContractError on key mismatch.
DistillLossBreakdown distill_loss(const std::map<ModalityKind, Mat>& teacher_features,
                                  const std::map<ModalityKind, Mat>& predicted_features);

/// Student initialized as a copy of the RGB teacher encoder plus fresh projection heads.
StudentModel init_student(const EncoderConfig& cfg, const Encoder& rgb_teacher, std::span<const ModalityKind> modalities,
                          std::uint64_t seed);

/// Forward + backward of the distillation objective on one batch of unlabeled target samples.
/// Gradients go into `student_grads` (empty_grads() structure) when non-null. When
/// `teacher_grads` is non-null the teachers are bound to those buffers behind the
/// stop-gradient, so they must stay empty.
DistillLossBreakdown distill_objective(const StudentModel& student, StudentModel* student_grads,
                                       const TeacherSet& teachers, TeacherSet* teacher_grads, SampleBatch batch,
                                       const DistillConfig& cfg, std::uint64_t step_seed);

DistillLossBreakdown distill_step(StudentModel& student, AdamW& optimizer, const TeacherSet& teachers,
                                  SampleBatch batch, const DistillConfig& cfg, double lr, std::uint64_t step_seed);

struct DistillLogRow {
  long step = 0;
  int epoch = 0;
  double lr = 0.0;
  DistillLossBreakdown loss;
};
using DistillLogger = std::function<void(const DistillLogRow&)>;

/// Trains `student` in place on unlabeled target data. Teachers are read-only.
void run_distill(StudentModel& student, const TeacherSet& teachers, std::span<const MultimodalSample> target_unlabeled,
                 const DistillConfig& cfg, const DistillLogger& log = {});

}  // namespace mmcdfsl
