#include "mmcdfsl/stages.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <sstream>

#include "mmcdfsl/errors.hpp"
#include "mmcdfsl/io.hpp"
#include "mmcdfsl/rng.hpp"

namespace mmcdfsl {

namespace {

using io::format_double;

std::vector<std::string> split_paths(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

Dataset load_data(const RunPaths& p) {
  if (!fs::exists(p.data_dir / "manifest.txt"))
    throw IoError("no dataset at " + p.data_dir.string() + "; run `mmcdfsl gen-data` first");
  return io::load_dataset(p.data_dir);
}

ModalityModel load_teacher(const RunPaths& p, ModalityKind kind) {
  const fs::path path = p.teacher(kind);
  if (!fs::exists(path))
    throw IoError("missing teacher checkpoint " + path.string() + "; run `mmcdfsl pretrain --modality " +
                  std::string(to_string(kind)) + "` first");
  ModelBundle b = io::load_bundle(path);
  const auto it = b.teachers.find(kind);
  if (it == b.teachers.end())
    throw IoError(path.string() + " holds no " + std::string(to_string(kind)) + " teacher");
  return std::move(it->second);
}

StudentModel load_student(const RunPaths& p) {
  if (!fs::exists(p.student))
    throw IoError("missing student checkpoint " + p.student.string() + "; run `mmcdfsl distill` first");
  ModelBundle b = io::load_bundle(p.student);
  if (!b.student) throw IoError(p.student.string() + " holds no student");
  return std::move(*b.student);
}

void write_resolved_config(const RunConfig& cfg, const RunPaths& p) {
  io::ensure_directory(p.out_dir);
  std::ofstream f(p.out_dir / "config.resolved.txt");
  f << "# config_hash=" << cfg.hash() << '\n' << cfg.dump();
  if (!f) throw IoError("cannot write " + (p.out_dir / "config.resolved.txt").string());
}

ModelBundle bundle_for(const RunConfig& cfg, const PipelineSettings& s, const std::string& stage) {
  ModelBundle b;
  b.config = s.model;
  b.frames = s.data.frames;
  b.metadata["config_hash"] = cfg.hash();
  b.metadata["stage"] = stage;
  return b;
}

}  // namespace

RunPaths RunPaths::from(const RunConfig& cfg) {
  RunPaths p;
  p.out_dir = cfg.get_string("out_dir");
  p.data_dir = cfg.get_string("data_dir").empty() ? p.out_dir / "data" : fs::path(cfg.get_string("data_dir"));
  p.checkpoint_dir = p.out_dir / "checkpoints";
  p.log_dir = p.out_dir / "logs";
  const std::string teachers = cfg.get_string("teachers");
  const std::vector<std::string> list = split_paths(teachers);
  if (list.size() == 1 && !fs::is_regular_file(list[0])) {
    p.teacher_dir = list[0];
  } else if (!list.empty()) {
    for (const std::string& f : list) p.teacher_files.emplace_back(f);
  } else {
    p.teacher_dir = p.checkpoint_dir;
  }
  p.student = cfg.get_string("student").empty() ? p.checkpoint_dir / "student.ckpt" : fs::path(cfg.get_string("student"));
  return p;
}

fs::path RunPaths::teacher(ModalityKind kind) const {
  const std::string file = "teacher_" + std::string(to_string(kind)) + ".ckpt";
  if (teacher_files.empty()) return teacher_dir / file;
  for (const fs::path& f : teacher_files) {
    if (f.filename() == file) return f;
    // An explicit file holding the requested teacher also qualifies.
    if (fs::exists(f)) {
      try {
        if (io::load_bundle(f).teachers.contains(kind)) return f;
      } catch (const IoError&) {
      }
    }
  }
  throw IoError("no teacher checkpoint for " + std::string(to_string(kind)) + " among --teachers");
}

// ---------------------------------------------------------------------------

void stage_gen_data(const RunConfig& cfg, std::ostream& log) {
  const PipelineSettings s = cfg.to_settings();
  const RunPaths p = RunPaths::from(cfg);
  write_resolved_config(cfg, p);
  const Dataset data = generate_dataset(s.data);
  io::save_dataset(p.data_dir, data, cfg.hash());
  log << "gen-data: " << data.source.size() << " source, " << data.target_unlabeled.size() << " unlabeled target, "
      << data.target_labeled.size() << " labeled target samples -> " << p.data_dir.string() << '\n';
}

void stage_pretrain(const RunConfig& cfg, std::ostream& log) {
  stage_pretrain(cfg, parse_modality(cfg.get_string("modality")), log);
}

void stage_pretrain(const RunConfig& cfg, ModalityKind kind, std::ostream& log) {
  const PipelineSettings s = cfg.to_settings();
  const RunPaths p = RunPaths::from(cfg);
  const Dataset data = load_data(p);
  const std::string name(to_string(kind));

  std::vector<std::vector<std::string>> rows;
  const ModalityModel m = train_teacher(s, data, kind, [&](const PretrainLogRow& r) {
    rows.push_back({std::to_string(r.step), format_double(r.loss.recon_source), format_double(r.loss.recon_target),
                    format_double(r.loss.ce_source), format_double(r.loss.total)});
  });
  io::write_csv(p.log_dir / ("pretrain_" + name + ".csv"), cfg.hash(),
                {"step", "recon_source", "recon_target", "ce_source", "total"}, rows);

  ModelBundle b = bundle_for(cfg, s, "pretrain");
  b.teachers.emplace(kind, m);
  const fs::path out =
      cfg.get_string("out").empty() ? p.checkpoint_dir / ("teacher_" + name + ".ckpt") : fs::path(cfg.get_string("out"));
  io::save_bundle(out, b);
  log << "pretrain " << name << ": " << rows.size() << " steps, final total "
      << (rows.empty() ? std::string("n/a") : rows.back().back()) << " -> " << out.string() << '\n';
}

void stage_distill(const RunConfig& cfg, std::ostream& log) {
  const PipelineSettings s = cfg.to_settings();
  const RunPaths p = RunPaths::from(cfg);
  const Dataset data = load_data(p);
  TeacherModels teachers;
  for (ModalityKind k : s.distill.modalities) teachers.emplace(k, load_teacher(p, k));

  std::vector<std::vector<std::string>> rows;
  const StudentModel student = train_student(s, data, teachers, [&](const DistillLogRow& r) {
    std::vector<std::string> row = {std::to_string(r.step)};
    for (ModalityKind k : kAllModalities) {
      const auto it = r.loss.fd.find(k);
      row.push_back(it == r.loss.fd.end() ? "" : format_double(it->second));
    }
    row.push_back(format_double(r.loss.total));
    rows.push_back(std::move(row));
  });
  io::write_csv(p.log_dir / "distill.csv", cfg.hash(), {"step", "fd_rgb", "fd_flow", "fd_pose", "total"}, rows);

  ModelBundle b = bundle_for(cfg, s, "distill");
  b.student = student;
  const fs::path out = cfg.get_string("out").empty() ? p.student : fs::path(cfg.get_string("out"));
  io::save_bundle(out, b);
  log << "distill: " << rows.size() << " steps, final total " << (rows.empty() ? std::string("n/a") : rows.back().back())
      << " -> " << out.string() << '\n';
}

std::vector<std::string> summary_header() {
  return {"mean", "ci95", "rho_infer", "ensemble", "nway", "kshot", "nquery", "episodes", "seed", "config_hash"};
}

EvalResult stage_fewshot_eval(const RunConfig& cfg, std::ostream& log) {
  const PipelineSettings s = cfg.to_settings();
  const RunPaths p = RunPaths::from(cfg);
  const Dataset data = load_data(p);
  const StudentModel student = load_student(p);
  const EvalResult r = run_evaluation(student.encoder, data.target_labeled, s.eval);

  std::vector<std::vector<std::string>> rows;
  for (std::size_t e = 0; e < r.per_episode_acc.size(); ++e)
    rows.push_back({std::to_string(e), format_double(r.per_episode_acc[e])});
  io::write_csv(p.out_dir / "episodes.csv", cfg.hash(), {"episode_id", "acc"}, rows);
  const EvalConfig& c = s.eval;
  io::write_csv(p.out_dir / "summary.csv", cfg.hash(), summary_header(),
                {{format_double(r.mean_acc), format_double(r.ci95), format_double(c.inference.mask_ratio),
                  std::to_string(c.inference.ensemble), std::to_string(c.n_way), std::to_string(c.k_shot),
                  std::to_string(c.n_query), std::to_string(c.episodes), cfg.raw("seed"), cfg.hash()}});
  char line[160];
  std::snprintf(line, sizeof line, "fewshot-eval: %d-way %d-shot, %d episodes, rho=%g P=%d: acc %.2f%% +- %.2f%%",
                c.n_way, c.k_shot, c.episodes, c.inference.mask_ratio, c.inference.ensemble, 100.0 * r.mean_acc,
                100.0 * r.ci95);
  log << line << '\n';
  return r;
}

std::vector<TradeoffRow> stage_tradeoff(const RunConfig& cfg, std::ostream& log) {
  const PipelineSettings s = cfg.to_settings();
  const RunPaths p = RunPaths::from(cfg);
  const Dataset data = load_data(p);
  const StudentModel student = load_student(p);
  const std::vector<double> rhos = cfg.get_double_list("tradeoff_rhos");
  const std::vector<int> ps = cfg.get_int_list("tradeoff_ensembles");
  for (double r : rhos)
    if (!(r >= 0.0 && r < 1.0)) throw ConfigError("tradeoff_rhos", "ratios must lie in [0, 1)");
  for (int v : ps)
    if (v < 1) throw ConfigError("tradeoff_ensembles", "sizes must be >= 1");
  const std::vector<TradeoffRow> rows =
      tradeoff_sweep(student.encoder, data.target_labeled, rhos, ps, s.eval,
                     static_cast<int>(cfg.get_int("timing_iters")), static_cast<int>(cfg.get_int("timing_warmup")));
  std::vector<std::vector<std::string>> out;
  for (const TradeoffRow& r : rows) {
    out.push_back({format_double(r.mask_ratio), std::to_string(r.ensemble), format_double(r.mean_acc),
                   format_double(r.ci95), format_double(r.wallclock_ms), format_double(r.wallclock_std_ms),
                   format_double(r.flops)});
    log << "tradeoff rho=" << r.mask_ratio << " P=" << r.ensemble << ": acc " << r.mean_acc << " ms " << r.wallclock_ms
        << '\n';
  }
  io::write_csv(p.out_dir / "tradeoff.csv", cfg.hash(),
                {"rho", "P", "mean_acc", "ci95", "wallclock_ms", "wallclock_std_ms", "flops"}, out);
  return rows;
}

std::vector<std::string> cost_header() {
  return {"rho", "P", "tokens", "flops_linear", "flops_quad", "flops_total", "ms_mean", "ms_std"};
}

std::vector<CostReport> stage_cost(const RunConfig& cfg, std::ostream& log) {
  const PipelineSettings s = cfg.to_settings();
  const RunPaths p = RunPaths::from(cfg);
  const bool vit_s = cfg.get_string("cost_shape") == "vit-s";
  const std::pair<double, int> settings[] = {{0.0, 1}, {s.eval.inference.mask_ratio, s.eval.inference.ensemble}};

  std::vector<CostReport> reports;
  if (vit_s) {
    EncoderConfig ec;
    ec.embed_dim = 384;
    ec.depth = 12;
    ec.heads = 6;
    const TokenGrid grid{8, 14, 14};
    for (const auto& [rho, pp] : settings) reports.push_back(count_flops(ec, grid, 2 * 16 * 16 * 3, s.eval.n_way, rho, pp));
  } else {
    // Timing needs real weights only for shape; a fresh encoder suffices when no student exists.
    Encoder enc;
    if (fs::exists(p.student)) {
      enc = load_student(p).encoder;
    } else {
      Rng rng(derive_seed(s.seed, "cost-encoder"));
      enc = init_encoder(s.model, default_modality_spec(ModalityKind::RGB), s.data.frames, rng);
    }
    Rng head_rng(derive_seed(s.seed, "cost-head"));
    const ClassifierHead head = init_classifier(enc.embed_dim(), s.eval.n_way, head_rng);
    DatasetSpec one = s.data;
    one.samples_per_class = 1;
    one.target_labeled_per_class = 1;
    one.n_source_classes = 2;
    one.n_target_classes = 2;
    one.target_class_offset.reset();
    const Clip clip = generate_dataset(one).target_labeled.front().clip(ModalityKind::RGB);
    for (const auto& [rho, pp] : settings) {
      CostReport r = count_flops(encoder_config_of(enc), enc.grid, enc.patch_volume(), s.eval.n_way, rho, pp);
      InferenceConfig ic = s.eval.inference;
      ic.mask_ratio = rho;
      ic.ensemble = pp;
      const WallclockStats w = measure_runtime(enc, head, clip, ic, static_cast<int>(cfg.get_int("timing_iters")),
                                               static_cast<int>(cfg.get_int("timing_warmup")));
      r.wallclock_mean_ms = w.mean_ms;
      r.wallclock_std_ms = w.std_ms;
      r.wallclock_iters = w.iters;
      reports.push_back(r);
    }
  }
  std::vector<std::vector<std::string>> rows;
  for (const CostReport& r : reports) {
    const bool timed = r.wallclock_iters > 0;
    rows.push_back({format_double(r.mask_ratio), std::to_string(r.ensemble), std::to_string(r.tokens_visible),
                    format_double(r.flops_linear), format_double(r.flops_attention_quadratic),
                    format_double(r.flops_total), timed ? format_double(r.wallclock_mean_ms) : "",
                    timed ? format_double(r.wallclock_std_ms) : ""});
  }
  io::write_csv(p.out_dir / "cost.csv", cfg.hash(), cost_header(), rows);
  for (std::size_t i = 0; i < cost_header().size(); ++i) log << (i ? "," : "") << cost_header()[i];
  log << '\n';
  for (const auto& r : rows) {
    for (std::size_t i = 0; i < r.size(); ++i) log << (i ? "," : "") << r[i];
    log << '\n';
  }
  return reports;
}

AblationReport stage_ablate(const RunConfig& cfg, std::ostream& log) {
  PipelineSettings s = cfg.to_settings();
  s.eval.episodes = static_cast<int>(cfg.get_int("ablation_episodes"));
  const RunPaths p = RunPaths::from(cfg);
  const std::vector<std::uint64_t> seeds = cfg.get_u64_list("ablation_seeds");
  const std::vector<AblationVariant> variants = parse_ablation_list(cfg.get_string("ablation_variants"));
  const AblationReport rep = run_ablations(s, seeds, variants, [&log](const std::string& m) { log << m << '\n'; });

  std::vector<std::vector<std::string>> rows;
  for (const AblationRow& r : rep.rows)
    rows.push_back({std::string(to_string(r.variant)), std::to_string(r.seed), format_double(r.result.mean_acc),
                    format_double(r.result.ci95), std::to_string(r.result.per_episode_acc.size())});
  io::write_csv(p.out_dir / "ablation_runs.csv", cfg.hash(), {"variant", "seed", "mean_acc", "ci95", "episodes"}, rows);

  rows.clear();
  for (const AblationDelta& d : rep.deltas) {
    rows.push_back({std::string(to_string(d.variant)), format_double(d.full_mean), format_double(d.full_ci95),
                    format_double(d.variant_mean), format_double(d.variant_ci95), format_double(d.mean_delta),
                    format_double(d.ci95), d.ci_disjoint ? "1" : "0"});
    char line[200];
    std::snprintf(line, sizeof line, "ablate %-20s full %.2f%% +- %.2f  variant %.2f%% +- %.2f  delta %+.2f +- %.2f",
                  std::string(to_string(d.variant)).c_str(), 100 * d.full_mean, 100 * d.full_ci95,
                  100 * d.variant_mean, 100 * d.variant_ci95, 100 * d.mean_delta, 100 * d.ci95);
    log << line << '\n';
  }
  io::write_csv(p.out_dir / "ablation.csv", cfg.hash(),
                {"variant", "full_mean", "full_ci95", "variant_mean", "variant_ci95", "delta", "delta_ci95",
                 "ci_disjoint"},
                rows);
  return rep;
}

void stage_export_embeddings(const RunConfig& cfg, std::ostream& log) {
  const RunPaths p = RunPaths::from(cfg);
  const Dataset data = load_data(p);
  const StudentModel student = load_student(p);
  const std::string pool_name = cfg.get_string("export_pool");
  const std::vector<MultimodalSample>& pool = pool_name == "source"             ? data.source
                                              : pool_name == "target_unlabeled" ? data.target_unlabeled
                                                                                : data.target_labeled;
  const std::size_t n = export_embeddings(student.encoder, pool, p.out_dir / "embeddings.csv", cfg.hash());
  log << "export-embeddings: " << n << " rows x " << 2 + student.encoder.embed_dim() << " columns\n";
}

EvalResult run_pipeline(const RunConfig& user_cfg, std::ostream& log) {
  // Stage outputs go to their default locations so later stages find them.
  RunConfig cfg = user_cfg;
  cfg.set("out", "", Provenance::Default);
  cfg.set("teachers", "", Provenance::Default);
  const std::vector<std::string> order = {"gen-data", "pretrain", "distill", "fewshot-eval"};
  const std::string resume = cfg.get_string("resume_from");
  const std::size_t first =
      resume.empty() ? 0 : static_cast<std::size_t>(std::find(order.begin(), order.end(), resume) - order.begin());
  const PipelineSettings s = cfg.to_settings();
  const RunPaths p = RunPaths::from(cfg);
  write_resolved_config(cfg, p);

  if (first > 0) {
    if (!fs::exists(p.data_dir / "manifest.txt"))
      throw IoError("cannot resume from " + resume + ": no dataset at " + p.data_dir.string());
    log << "skipping gen-data\n";
  } else {
    stage_gen_data(cfg, log);
  }
  for (ModalityKind k : s.pretrain_modalities) {
    if (first > 1) {
      if (!fs::exists(p.teacher(k)))
        throw IoError("cannot resume from " + resume + ": missing teacher checkpoint " + p.teacher(k).string());
      log << "skipping pretrain " << to_string(k) << '\n';
    } else {
      stage_pretrain(cfg, k, log);
    }
  }
  if (first > 2) {
    if (!fs::exists(p.student))
      throw IoError("cannot resume from " + resume + ": missing student checkpoint " + p.student.string());
    log << "skipping distill\n";
  } else {
    stage_distill(cfg, log);
  }
  return stage_fewshot_eval(cfg, log);
}

}  // namespace mmcdfsl
