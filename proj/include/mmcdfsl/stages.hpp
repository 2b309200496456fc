#pragma once

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "mmcdfsl/config.hpp"
#include "mmcdfsl/eval.hpp"

namespace mmcdfsl {

namespace fs = std::filesystem;

/// Where each stage reads and writes, resolved from the path keys of a RunConfig.
struct RunPaths {
  fs::path out_dir;
  fs::path data_dir;
  fs::path checkpoint_dir;
  fs::path log_dir;
  std::vector<fs::path> teacher_files;  // explicit list from `teachers`, empty when a directory is used
  fs::path teacher_dir;
  fs::path student;

  static RunPaths from(const RunConfig& cfg);
  fs::path teacher(ModalityKind kind) const;
};

// Each stage writes its artifacts under out_dir, stamps them with the config hash,
// and reports progress on `log`. Missing upstream artifacts raise IoError.

void stage_gen_data(const RunConfig& cfg, std::ostream& log);
/// Trains the teacher named by the `modality` key; writes the checkpoint to `out`
/// (or checkpoints/teacher_<modality>.ckpt) and logs/pretrain_<modality>.csv.
void stage_pretrain(const RunConfig& cfg, std::ostream& log);
void stage_pretrain(const RunConfig& cfg, ModalityKind kind, std::ostream& log);
/// Writes the student checkpoint and logs/distill.csv.
void stage_distill(const RunConfig& cfg, std::ostream& log);
/// Writes episodes.csv and summary.csv; prints a one-line summary.
EvalResult stage_fewshot_eval(const RunConfig& cfg, std::ostream& log);
std::vector<TradeoffRow> stage_tradeoff(const RunConfig& cfg, std::ostream& log);
std::vector<CostReport> stage_cost(const RunConfig& cfg, std::ostream& log);
AblationReport stage_ablate(const RunConfig& cfg, std::ostream& log);
void stage_export_embeddings(const RunConfig& cfg, std::ostream& log);

/// gen-data, pretrain per modality, distill, fewshot-eval. Stages before
/// `resume_from` are skipped and must have left their artifacts behind.
EvalResult run_pipeline(const RunConfig& cfg, std::ostream& log);

/// Rows of `summary.csv` / `cost.csv` as written to disk.
std::vector<std::string> summary_header();
std::vector<std::string> cost_header();

}  // namespace mmcdfsl
