#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "mmcdfsl/distill.hpp"
#include "mmcdfsl/eval.hpp"
#include "mmcdfsl/models.hpp"
#include "mmcdfsl/pretrain.hpp"
#include "mmcdfsl/synth_data.hpp"

namespace mmcdfsl {

/// Every stage's settings. Stage seeds are derived from `seed` by apply_seed().
struct PipelineSettings {
  std::uint64_t seed = 0;
  DatasetSpec data;
  EncoderConfig model;
  std::vector<ModalityKind> pretrain_modalities = {ModalityKind::RGB, ModalityKind::FLOW, ModalityKind::POSE};
  PretrainConfig pretrain;                      // modality and lambda_ce are filled per teacher
  std::map<ModalityKind, double> lambda_ce;     // missing entries use default_lambda_ce()
  DistillConfig distill;
  EvalConfig eval;

  /// Overwrites the data, pretrain, distill and eval seeds with values derived from `seed`.
  void apply_seed();
  double lambda_for(ModalityKind kind) const;
  /// Pretraining config for one teacher.
  PretrainConfig pretrain_for(ModalityKind kind) const;
  void validate() const;
};

using TeacherModels = std::map<ModalityKind, ModalityModel>;

struct PipelineLog {
  std::function<void(ModalityKind, const PretrainLogRow&)> pretrain;
  DistillLogger distill;
};

/// Initializes and pretrains one teacher per requested modality.
TeacherModels train_teachers(const PipelineSettings& s, const Dataset& data, const PipelineLog& log = {});
ModalityModel train_teacher(const PipelineSettings& s, const Dataset& data, ModalityKind kind,
                            const PretrainLogger& log = {});

/// Encoders of the given teachers, for use as frozen distillation targets.
TeacherSet teacher_encoders(const TeacherModels& teachers);

/// Student initialized from the RGB teacher and distilled from all configured teachers.
StudentModel train_student(const PipelineSettings& s, const Dataset& data, const TeacherModels& teachers,
                           const DistillLogger& log = {});

// ---------------------------------------------------------------------------
// Ablations

enum class AblationVariant { Full, OnlyReconstruction, OnlySource, OnlyRgbTraining, RgbPose };
std::string_view to_string(AblationVariant v);
/// Accepts "full", "only_reconstruction", "only_source", "only_rgb_training", "rgb_pose".
AblationVariant parse_ablation(std::string_view name);
std::vector<AblationVariant> parse_ablation_list(std::string_view csv);

/// Settings of the variant derived from the full-method settings.
/// OnlyReconstruction zeroes every lambda_ce; OnlySource drops target reconstruction;
/// RgbPose distills from the RGB and POSE teachers only.
PipelineSettings ablation_settings(const PipelineSettings& full, AblationVariant v);
/// OnlyRgbTraining skips distillation and evaluates the RGB teacher encoder.
bool uses_distillation(AblationVariant v);

struct AblationRow {
  AblationVariant variant;
  std::uint64_t seed = 0;
  EvalResult result;
};

struct AblationDelta {
  AblationVariant variant;
  double mean_delta = 0.0;  // full minus variant, averaged over seeds and paired episodes
  double ci95 = 0.0;        // of the pooled paired per-episode differences
  double full_mean = 0.0;
  double full_ci95 = 0.0;
  double variant_mean = 0.0;
  double variant_ci95 = 0.0;
  bool ci_disjoint = false;  // full and variant intervals do not overlap
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::vector<AblationDelta> deltas;  // one per non-full variant
};

using AblationLogger = std::function<void(const std::string&)>;

/// Runs the full method plus each requested variant for every seed. Teachers are shared
/// between variants whose pretraining settings coincide; all variants of a seed use the
/// same evaluation episodes.
AblationReport run_ablations(const PipelineSettings& base, std::span<const std::uint64_t> seeds,
                             std::span<const AblationVariant> variants, const AblationLogger& log = {});

/// Paired comparison of per-episode accuracies pooled over seeds.
AblationDelta paired_delta(std::span<const double> full, std::span<const double> variant);

}  // namespace mmcdfsl
