#include "mmcdfsl/pipeline.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <list>

#include "mmcdfsl/errors.hpp"
#include "mmcdfsl/rng.hpp"

namespace mmcdfsl {

void PipelineSettings::apply_seed() {
  data.seed = derive_seed(seed, "data");
  pretrain.seed = derive_seed(seed, "pretrain");
  distill.seed = derive_seed(seed, "distill");
  eval.seed = derive_seed(seed, "eval");
  eval.inference.seed = derive_seed(seed, "inference");
}

double PipelineSettings::lambda_for(ModalityKind kind) const {
  const auto it = lambda_ce.find(kind);
  return it == lambda_ce.end() ? default_lambda_ce(kind) : it->second;
}

PretrainConfig PipelineSettings::pretrain_for(ModalityKind kind) const {
  PretrainConfig c = pretrain;
  c.modality = kind;
  c.lambda_ce = lambda_for(kind);
  c.seed = derive_seed(pretrain.seed, "teacher", {static_cast<std::uint64_t>(kind)});
  return c;
}

void PipelineSettings::validate() const {
  data.validate();
  model.validate();
  pretrain.validate();
  for (ModalityKind k : pretrain_modalities) pretrain_for(k).validate();
  distill.validate();
  eval.validate();
  for (ModalityKind k : distill.modalities)
    if (std::find(pretrain_modalities.begin(), pretrain_modalities.end(), k) == pretrain_modalities.end())
      throw ConfigError("modalities", "distilling " + std::string(to_string(k)) + " needs its teacher pretrained");
  if (std::find(pretrain_modalities.begin(), pretrain_modalities.end(), ModalityKind::RGB) == pretrain_modalities.end())
    throw ConfigError("modalities", "the RGB teacher is required");
}

ModalityModel train_teacher(const PipelineSettings& s, const Dataset& data, ModalityKind kind,
                            const PretrainLogger& log) {
  const auto spec = std::find_if(s.data.modalities.begin(), s.data.modalities.end(),
                                 [kind](const ModalitySpec& m) { return m.kind == kind; });
  if (spec == s.data.modalities.end())
    throw ConfigError("modalities", "dataset has no " + std::string(to_string(kind)) + " stream");
  const PretrainConfig cfg = s.pretrain_for(kind);
  ModalityModel m = init_modality_model(s.model, *spec, s.data.frames, s.data.n_source_classes, cfg.seed);
  run_pretrain(m, data.source, data.target_unlabeled, cfg, log);
  return m;
}

TeacherModels train_teachers(const PipelineSettings& s, const Dataset& data, const PipelineLog& log) {
  TeacherModels out;
  for (ModalityKind k : s.pretrain_modalities) {
    PretrainLogger l;
    if (log.pretrain) l = [&log, k](const PretrainLogRow& r) { log.pretrain(k, r); };
    out.emplace(k, train_teacher(s, data, k, l));
  }
  return out;
}

TeacherSet teacher_encoders(const TeacherModels& teachers) {
  TeacherSet t;
  for (const auto& [k, m] : teachers) t.emplace(k, m.encoder);
  return t;
}

StudentModel train_student(const PipelineSettings& s, const Dataset& data, const TeacherModels& teachers,
                           const DistillLogger& log) {
  if (!teachers.contains(ModalityKind::RGB)) throw ContractError("train_student: RGB teacher missing");
  for (ModalityKind k : s.distill.modalities)
    if (!teachers.contains(k)) throw ContractError("train_student: no " + std::string(to_string(k)) + " teacher");
  StudentModel student = init_student(s.model, teachers.at(ModalityKind::RGB).encoder, s.distill.modalities,
                                      derive_seed(s.distill.seed, "student-init"));
  run_distill(student, teacher_encoders(teachers), data.target_unlabeled, s.distill, log);
  return student;
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::pair<AblationVariant, std::string_view> kVariantNames[] = {
    {AblationVariant::Full, "full"},
    {AblationVariant::OnlyReconstruction, "only_reconstruction"},
    {AblationVariant::OnlySource, "only_source"},
    {AblationVariant::OnlyRgbTraining, "only_rgb_training"},
    {AblationVariant::RgbPose, "rgb_pose"},
};
}  // namespace

std::string_view to_string(AblationVariant v) {
  for (const auto& [k, name] : kVariantNames)
    if (k == v) return name;
  return "unknown";
}

AblationVariant parse_ablation(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  for (const auto& [k, n] : kVariantNames)
    if (n == lower) return k;
  throw ConfigError("ablation_variants", "unknown variant '" + std::string(name) + "'");
}

std::vector<AblationVariant> parse_ablation_list(std::string_view csv) {
  std::vector<AblationVariant> out;
  std::size_t start = 0;
  while (start <= csv.size()) {
    const std::size_t end = std::min(csv.find(',', start), csv.size());
    std::string_view item = csv.substr(start, end - start);
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.front()))) item.remove_prefix(1);
    while (!item.empty() && std::isspace(static_cast<unsigned char>(item.back()))) item.remove_suffix(1);
    if (!item.empty()) out.push_back(parse_ablation(item));
    start = end + 1;
  }
  return out;
}

PipelineSettings ablation_settings(const PipelineSettings& full, AblationVariant v) {
  PipelineSettings s = full;
  switch (v) {
    case AblationVariant::Full:
    case AblationVariant::OnlyRgbTraining:
      break;
    case AblationVariant::OnlyReconstruction:
      for (ModalityKind k : s.pretrain_modalities) s.lambda_ce[k] = 0.0;
      break;
    case AblationVariant::OnlySource:
      s.pretrain.target_reconstruction = false;
      break;
    case AblationVariant::RgbPose:
      s.distill.modalities = {ModalityKind::RGB, ModalityKind::POSE};
      break;
  }
  return s;
}

bool uses_distillation(AblationVariant v) { return v != AblationVariant::OnlyRgbTraining; }

AblationDelta paired_delta(std::span<const double> full, std::span<const double> variant) {
  if (full.size() != variant.size()) throw ContractError("paired_delta: unequal episode counts");
  std::vector<double> diff(full.size());
  for (std::size_t i = 0; i < full.size(); ++i) diff[i] = full[i] - variant[i];
  AblationDelta d{};
  d.mean_delta = mean_of(diff);
  d.ci95 = ci95_halfwidth(diff);
  d.full_mean = mean_of(full);
  d.full_ci95 = ci95_halfwidth(full);
  d.variant_mean = mean_of(variant);
  d.variant_ci95 = ci95_halfwidth(variant);
  d.ci_disjoint = d.full_mean - d.full_ci95 > d.variant_mean + d.variant_ci95 ||
                  d.variant_mean - d.variant_ci95 > d.full_mean + d.full_ci95;
  return d;
}

namespace {

// Teachers are reusable across variants when everything that shapes pretraining matches.
bool same_pretraining(const PipelineSettings& a, const PipelineSettings& b, ModalityKind k) {
  const PretrainConfig x = a.pretrain_for(k), y = b.pretrain_for(k);
  return x.lambda_ce == y.lambda_ce && x.target_reconstruction == y.target_reconstruction &&
         x.mask_ratio == y.mask_ratio && x.epochs == y.epochs && x.batch_size == y.batch_size && x.seed == y.seed;
}

}  // namespace

AblationReport run_ablations(const PipelineSettings& base, std::span<const std::uint64_t> seeds,
                             std::span<const AblationVariant> variants, const AblationLogger& log) {
  std::vector<AblationVariant> all = {AblationVariant::Full};
  for (AblationVariant v : variants)
    if (v != AblationVariant::Full && std::find(all.begin(), all.end(), v) == all.end()) all.push_back(v);

  AblationReport report;
  std::map<AblationVariant, std::vector<double>> pooled;
  for (std::uint64_t seed : seeds) {
    PipelineSettings full = base;
    full.seed = seed;
    full.apply_seed();
    full.validate();
    const Dataset data = generate_dataset(full.data);

    struct Trained {
      PipelineSettings settings;
      ModalityKind kind;
      ModalityModel model;
    };
    std::list<Trained> cache;  // stable references
    auto teacher = [&](const PipelineSettings& s, ModalityKind k) -> const ModalityModel& {
      for (const Trained& t : cache)
        if (t.kind == k && same_pretraining(t.settings, s, k)) return t.model;
      if (log) log("seed " + std::to_string(seed) + ": pretraining " + std::string(to_string(k)) + " teacher");
      cache.push_back({s, k, train_teacher(s, data, k)});
      return cache.back().model;
    };

    for (AblationVariant v : all) {
      const PipelineSettings s = ablation_settings(full, v);
      EvalResult er;
      if (uses_distillation(v)) {
        TeacherModels teachers;
        teachers.emplace(ModalityKind::RGB, teacher(s, ModalityKind::RGB));
        for (ModalityKind k : s.distill.modalities)
          if (!teachers.contains(k)) teachers.emplace(k, teacher(s, k));
        if (log) log("seed " + std::to_string(seed) + ": distilling " + std::string(to_string(v)));
        const StudentModel student = train_student(s, data, teachers);
        er = run_evaluation(student.encoder, data.target_labeled, s.eval);
      } else {
        er = run_evaluation(teacher(s, ModalityKind::RGB).encoder, data.target_labeled, s.eval);
      }
      if (log)
        log("seed " + std::to_string(seed) + ": " + std::string(to_string(v)) + " acc " + std::to_string(er.mean_acc));
      auto& acc = pooled[v];
      acc.insert(acc.end(), er.per_episode_acc.begin(), er.per_episode_acc.end());
      report.rows.push_back({v, seed, std::move(er)});
    }
  }
  for (AblationVariant v : all) {
    if (v == AblationVariant::Full) continue;
    AblationDelta d = paired_delta(pooled[AblationVariant::Full], pooled[v]);
    d.variant = v;
    report.deltas.push_back(d);
  }
  return report;
}

}  // namespace mmcdfsl
