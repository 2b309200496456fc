#include "mmcdfsl/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mmcdfsl/errors.hpp"
#include "mmcdfsl/io.hpp"
#include "mmcdfsl/rng.hpp"

namespace mmcdfsl {

namespace {

using K = KeyType;

ConfigKey num(std::string name, K type, std::string def, std::string doc, std::optional<double> min = {},
              std::optional<double> max = {}, bool max_exclusive = false) {
  return {std::move(name), type, std::move(def), std::move(doc), min, max, max_exclusive, true, {}};
}

ConfigKey str(std::string name, std::string def, std::string doc, std::vector<std::string> choices = {},
              bool hashed = true) {
  return {std::move(name), K::String, std::move(def), std::move(doc), {}, {}, false, hashed, std::move(choices)};
}

ConfigKey path(std::string name, std::string doc) {
  return {std::move(name), K::String, "", std::move(doc), {}, {}, false, false, {}};
}

std::vector<ConfigKey> build_keys() {
  return {
      num("seed", K::UInt64, "0", "Global seed; every stage seed is derived from it."),
      {"out_dir", K::String, "runs/default", "Output directory for data, checkpoints, logs and CSVs.", {}, {}, false,
       false, {}},
      path("data_dir", "Dataset directory (default: <out_dir>/data)."),
      path("teachers", "Teacher checkpoints: a directory of teacher_<modality>.ckpt or a comma-separated file list "
                       "(default: <out_dir>/checkpoints)."),
      path("student", "Student checkpoint to read (default: <out_dir>/checkpoints/student.ckpt)."),
      path("out", "pretrain/distill: checkpoint path to write (default: inside <out_dir>/checkpoints)."),
      str("resume_from", "", "pipeline: first stage to run; earlier stages load their checkpoints.",
          {"", "gen-data", "pretrain", "distill", "fewshot-eval"}, false),

      num("data_source_classes", K::Int, "8", "Number of source-domain classes.", 2, 64),
      num("data_target_classes", K::Int, "8", "Number of target-domain (novel) classes.", 2, 64),
      num("data_samples_per_class", K::Int, "12", "Samples per class in the source and unlabeled target pools.", 1),
      num("data_target_labeled_per_class", K::Int, "20", "Samples per class in the labeled target pool.", 1),
      num("data_frames", K::Int, "8", "Frames per clip (multiple of the tubelet size).", 2, 64),
      num("data_motion_scale", K::Float, "1", "Sprite displacement multiplier.", 0, 4),
      num("data_source_texture", K::Int, "0", "Source background: 0 gradient, 1 stripes, 2 stripes + clutter.", 0, 2),
      num("data_target_texture", K::Int, "2", "Target background: 0 gradient, 1 stripes, 2 stripes + clutter.", 0, 2),
      num("data_source_brightness", K::Float, "0", "Source brightness shift.", -1, 1),
      num("data_target_brightness", K::Float, "-0.1", "Target brightness shift.", -1, 1),
      num("data_source_noise", K::Float, "0.02", "Source pixel noise std.", 0, 1),
      num("data_target_noise", K::Float, "0.1", "Target pixel noise std.", 0, 1),
      num("data_heatmap_sigma", K::Float, "2.857142857142857", "Pose heatmap std in pixels.", 1e-3, 16),

      num("model_dim", K::Int, "64", "Encoder width d.", 4, 1024),
      num("model_depth", K::Int, "4", "Encoder blocks.", 1, 24),
      num("model_heads", K::Int, "4", "Encoder attention heads.", 1, 64),
      num("model_mlp_ratio", K::Int, "4", "MLP hidden width as a multiple of d.", 1, 8),
      num("decoder_dim", K::Int, "32", "Reconstruction decoder width.", 2, 1024),
      num("decoder_depth", K::Int, "1", "Reconstruction decoder blocks.", 1, 12),
      num("decoder_heads", K::Int, "2", "Reconstruction decoder heads.", 1, 64),

      num("rho_pretrain", K::Float, "0.9", "Tube mask ratio during pretraining.", 0, 1, true),
      num("pretrain_epochs", K::Int, "30", "Pretraining epochs per teacher.", 0),
      num("pretrain_batch_size", K::Int, "8", "Source (and target) samples per pretraining step.", 1),
      num("lambda_ce_rgb", K::Float, "0.05", "Cross-entropy weight for the RGB teacher.", 0),
      num("lambda_ce_flow", K::Float, "0.01", "Cross-entropy weight for the FLOW teacher.", 0),
      num("lambda_ce_pose", K::Float, "0.01", "Cross-entropy weight for the POSE teacher.", 0),
      num("target_reconstruction", K::Bool, "true", "Include the unlabeled target reconstruction term."),
      num("lr", K::Float, "0.002", "Peak AdamW learning rate (pretraining and distillation).", 0),
      num("min_lr", K::Float, "1e-06", "Final cosine learning rate.", 0),
      num("warmup_fraction", K::Float, "0.1", "Fraction of steps with linear warm-up.", 0, 1),
      num("weight_decay", K::Float, "0.05", "AdamW decoupled weight decay on weight matrices.", 0),

      num("rho_distill", K::Float, "0.75", "Tube mask ratio during distillation.", 0, 1, true),
      num("distill_epochs", K::Int, "30", "Distillation epochs.", 0),
      num("distill_batch_size", K::Int, "2", "Unlabeled target samples per distillation step.", 1),
      str("modalities", "rgb,flow,pose", "Teachers to distill from (must include rgb)."),
      num("distill_weight_rgb", K::Float, "1", "Weight of the RGB feature distance.", 0),
      num("distill_weight_flow", K::Float, "1", "Weight of the FLOW feature distance.", 0),
      num("distill_weight_pose", K::Float, "1", "Weight of the POSE feature distance.", 0),

      num("rho_infer", K::Float, "0.75", "Tube mask ratio at few-shot time.", 0, 1, true),
      num("ensemble", K::Int, "2", "Ensemble size P of masked inference.", 1, 64),
      num("nway", K::Int, "5", "Classes per episode.", 2),
      num("kshot", K::Int, "1", "Support samples per class.", 1),
      num("nquery", K::Int, "15", "Query samples per class.", 1),
      num("episodes", K::Int, "600", "Evaluation episodes.", 1),
      num("head_iterations", K::Int, "100", "Full-batch gradient steps for the few-shot head.", 0),
      num("head_mask_refreshes", K::Int, "100", "Support mask redraws during head training.", 1),
      num("head_lr", K::Float, "0.01", "Few-shot head learning rate.", 0),
      num("head_weight_decay", K::Float, "0.0001", "Few-shot head L2 weight decay.", 0),

      num("tradeoff_rhos", K::FloatList, "0,0.5,0.75,0.9", "tradeoff: mask ratios to sweep."),
      num("tradeoff_ensembles", K::IntList, "1,2,3", "tradeoff: ensemble sizes to sweep."),
      num("timing_iters", K::Int, "600", "Timed calls per wall-clock measurement.", 1),
      num("timing_warmup", K::Int, "10", "Untimed warm-up calls before timing.", 0),
      num("ablation_seeds", K::UInt64List, "1,2,3", "ablate: pipeline seeds."),
      str("ablation_variants", "only_rgb_training,only_reconstruction,only_source,rgb_pose",
          "ablate: variants compared against the full method."),
      num("ablation_episodes", K::Int, "200", "ablate: evaluation episodes per seed and variant.", 1),

      str("modality", "rgb", "pretrain: which teacher to train.", {"rgb", "flow", "pose"}),
      str("export_pool", "target_labeled", "export-embeddings: pool to embed.",
          {"source", "target_unlabeled", "target_labeled"}),
      str("cost_shape", "toy", "cost: toy model or ViT-S (d=384, depth 12, 1568 tokens).", {"toy", "vit-s"}),
  };
}

bool parse_number(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* b = s.data();
  const char* e = b + s.size();
  const auto [p, ec] = std::from_chars(b, e, out);
  return ec == std::errc{} && p == e && std::isfinite(out);
}

template <class T>
bool parse_integer(const std::string& s, T& out) {
  if (s.empty()) return false;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void check_range(const ConfigKey& k, double v) {
  if ((k.min && v < *k.min) || (k.max && (k.max_exclusive ? v >= *k.max : v > *k.max))) {
    std::ostringstream m;
    m << "value " << v << " outside [" << (k.min ? io::format_double(*k.min) : "-inf") << ", "
      << (k.max ? io::format_double(*k.max) : "inf") << (k.max_exclusive ? ")" : "]");
    throw ConfigError(k.name, m.str());
  }
}

// Returns the canonical text form or throws ConfigError naming the key.
std::string canonicalize(const ConfigKey& k, const std::string& raw) {
  const std::string v = trim(raw);
  switch (k.type) {
    case K::Int: {
      std::int64_t x;
      if (!parse_integer(v, x)) throw ConfigError(k.name, "expected an integer, got '" + v + "'");
      check_range(k, static_cast<double>(x));
      return std::to_string(x);
    }
    case K::UInt64: {
      std::uint64_t x;
      if (!parse_integer(v, x)) throw ConfigError(k.name, "expected a non-negative integer, got '" + v + "'");
      return std::to_string(x);
    }
    case K::Float: {
      double x;
      if (!parse_number(v, x)) throw ConfigError(k.name, "expected a number, got '" + v + "'");
      check_range(k, x);
      return io::format_double(x);
    }
    case K::Bool: {
      if (v == "true" || v == "1" || v == "yes" || v == "on") return "true";
      if (v == "false" || v == "0" || v == "no" || v == "off") return "false";
      throw ConfigError(k.name, "expected true or false, got '" + v + "'");
    }
    case K::String:
      if (!k.choices.empty() && std::find(k.choices.begin(), k.choices.end(), v) == k.choices.end())
        throw ConfigError(k.name, "unsupported value '" + v + "'");
      return v;
    case K::FloatList:
    case K::IntList:
    case K::UInt64List: {
      std::string out;
      const std::vector<std::string> items = split_list(v);
      if (items.empty()) throw ConfigError(k.name, "expected a non-empty comma-separated list");
      for (const std::string& item : items) {
        std::string c;
        if (k.type == K::FloatList) {
          double x;
          if (!parse_number(item, x)) throw ConfigError(k.name, "bad list element '" + item + "'");
          c = io::format_double(x);
        } else if (k.type == K::IntList) {
          std::int64_t x;
          if (!parse_integer(item, x)) throw ConfigError(k.name, "bad list element '" + item + "'");
          c = std::to_string(x);
        } else {
          std::uint64_t x;
          if (!parse_integer(item, x)) throw ConfigError(k.name, "bad list element '" + item + "'");
          c = std::to_string(x);
        }
        out += (out.empty() ? "" : ",") + c;
      }
      return out;
    }
  }
  return v;
}

const ConfigKey& key_or_throw(const std::string& name) {
  const ConfigKey* k = find_key(name);
  if (!k) throw ConfigError(name, "unknown configuration key");
  return *k;
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = build_keys();
  return keys;
}

const ConfigKey* find_key(const std::string& name) {
  for (const ConfigKey& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::Default: return "default";
    case Provenance::File: return "file";
    case Provenance::Flag: return "flag";
  }
  return "unknown";
}

RunConfig::RunConfig() {
  for (const ConfigKey& k : config_keys()) {
    values_[k.name] = canonicalize(k, k.default_value.empty() && k.type != K::String ? "0" : k.default_value);
    provenance_[k.name] = Provenance::Default;
  }
}

void RunConfig::set(const std::string& key, const std::string& value, Provenance from) {
  const ConfigKey& k = key_or_throw(key);
  values_[key] = canonicalize(k, value);
  provenance_[key] = from;
}

const std::string& RunConfig::raw(const std::string& key) const {
  key_or_throw(key);
  return values_.at(key);
}

Provenance RunConfig::provenance(const std::string& key) const {
  key_or_throw(key);
  return provenance_.at(key);
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  std::int64_t x = 0;
  parse_integer(raw(key), x);
  return x;
}

std::uint64_t RunConfig::get_u64(const std::string& key) const {
  std::uint64_t x = 0;
  parse_integer(raw(key), x);
  return x;
}

double RunConfig::get_double(const std::string& key) const {
  double x = 0;
  parse_number(raw(key), x);
  return x;
}

bool RunConfig::get_bool(const std::string& key) const { return raw(key) == "true"; }

const std::string& RunConfig::get_string(const std::string& key) const { return raw(key); }

std::vector<double> RunConfig::get_double_list(const std::string& key) const {
  std::vector<double> out;
  for (const std::string& s : split_list(raw(key))) {
    double x = 0;
    parse_number(s, x);
    out.push_back(x);
  }
  return out;
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const std::string& s : split_list(raw(key))) {
    int x = 0;
    parse_integer(s, x);
    out.push_back(x);
  }
  return out;
}

std::vector<std::uint64_t> RunConfig::get_u64_list(const std::string& key) const {
  std::vector<std::uint64_t> out;
  for (const std::string& s : split_list(raw(key))) {
    std::uint64_t x = 0;
    parse_integer(s, x);
    out.push_back(x);
  }
  return out;
}

std::string RunConfig::hash() const {
  std::string text;
  for (const auto& [k, v] : values_)
    if (find_key(k)->hashed) text += k + "=" + v + "\n";
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

std::string RunConfig::dump() const {
  std::ostringstream o;
  for (const ConfigKey& k : config_keys())
    o << k.name << " = " << values_.at(k.name) << "  # " << to_string(provenance_.at(k.name)) << '\n';
  return o.str();
}

PipelineSettings RunConfig::to_settings() const {
  PipelineSettings s;
  s.seed = get_u64("seed");

  DatasetSpec& d = s.data;
  d.n_source_classes = static_cast<int>(get_int("data_source_classes"));
  d.n_target_classes = static_cast<int>(get_int("data_target_classes"));
  d.samples_per_class = static_cast<int>(get_int("data_samples_per_class"));
  d.target_labeled_per_class = static_cast<int>(get_int("data_target_labeled_per_class"));
  d.frames = static_cast<int>(get_int("data_frames"));
  d.motion_scale = get_double("data_motion_scale");
  d.source = {static_cast<int>(get_int("data_source_texture")), get_double("data_source_brightness"),
              get_double("data_source_noise")};
  d.target = {static_cast<int>(get_int("data_target_texture")), get_double("data_target_brightness"),
              get_double("data_target_noise")};
  d.heatmap_sigma = get_double("data_heatmap_sigma");

  EncoderConfig& m = s.model;
  m.embed_dim = static_cast<int>(get_int("model_dim"));
  m.depth = static_cast<int>(get_int("model_depth"));
  m.heads = static_cast<int>(get_int("model_heads"));
  m.mlp_ratio = static_cast<int>(get_int("model_mlp_ratio"));
  m.decoder_dim = static_cast<int>(get_int("decoder_dim"));
  m.decoder_depth = static_cast<int>(get_int("decoder_depth"));
  m.decoder_heads = static_cast<int>(get_int("decoder_heads"));

  OptimizerConfig opt;
  opt.peak_lr = get_double("lr");
  opt.min_lr = get_double("min_lr");
  opt.warmup_fraction = get_double("warmup_fraction");
  opt.weight_decay = get_double("weight_decay");

  s.pretrain.mask_ratio = get_double("rho_pretrain");
  s.pretrain.epochs = static_cast<int>(get_int("pretrain_epochs"));
  s.pretrain.batch_size = static_cast<int>(get_int("pretrain_batch_size"));
  s.pretrain.target_reconstruction = get_bool("target_reconstruction");
  s.pretrain.optimizer = opt;
  s.lambda_ce = {{ModalityKind::RGB, get_double("lambda_ce_rgb")},
                 {ModalityKind::FLOW, get_double("lambda_ce_flow")},
                 {ModalityKind::POSE, get_double("lambda_ce_pose")}};

  try {
    s.distill.modalities = parse_modality_list(get_string("modalities"));
  } catch (const ConfigError& e) {
    throw ConfigError("modalities", e.what());
  }
  s.distill.mask_ratio = get_double("rho_distill");
  s.distill.epochs = static_cast<int>(get_int("distill_epochs"));
  s.distill.batch_size = static_cast<int>(get_int("distill_batch_size"));
  s.distill.weights = {{ModalityKind::RGB, get_double("distill_weight_rgb")},
                       {ModalityKind::FLOW, get_double("distill_weight_flow")},
                       {ModalityKind::POSE, get_double("distill_weight_pose")}};
  s.distill.optimizer = opt;
  s.pretrain_modalities = s.distill.modalities;

  EvalConfig& e = s.eval;
  e.n_way = static_cast<int>(get_int("nway"));
  e.k_shot = static_cast<int>(get_int("kshot"));
  e.n_query = static_cast<int>(get_int("nquery"));
  e.episodes = static_cast<int>(get_int("episodes"));
  e.inference.mask_ratio = get_double("rho_infer");
  e.inference.ensemble = static_cast<int>(get_int("ensemble"));
  e.head.iterations = static_cast<int>(get_int("head_iterations"));
  e.head.mask_refreshes = static_cast<int>(get_int("head_mask_refreshes"));
  e.head.learning_rate = get_double("head_lr");
  e.head.weight_decay = get_double("head_weight_decay");

  s.apply_seed();
  if (d.frames % m.tubelet_size != 0) throw ConfigError("data_frames", "must be a multiple of the tubelet size");
  if (e.n_way > d.n_target_classes) throw ConfigError("nway", "exceeds data_target_classes");
  if (e.k_shot + e.n_query > d.target_labeled_per_class)
    throw ConfigError("kshot", "kshot + nquery exceeds data_target_labeled_per_class");
  s.validate();
  return s;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": missing key");
    key_or_throw(key);
    out.emplace_back(key, trim(line.substr(eq + 1)));
  }
  return out;
}

RunConfig load_config(const std::optional<std::filesystem::path>& file,
                      const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig c;
  if (file) {
    std::ifstream f(*file);
    if (!f) throw IoError("cannot read config file " + file->string());
    std::stringstream ss;
    ss << f.rdbuf();
    for (const auto& [k, v] : parse_config_text(ss.str())) c.set(k, v, Provenance::File);
  }
  for (const auto& [k, v] : overrides) c.set(k, v, Provenance::Flag);
  return c;
}

std::string key_to_flag(const std::string& key) {
  std::string f = key;
  std::replace(f.begin(), f.end(), '_', '-');
  return f;
}

std::string flag_to_key(const std::string& flag) {
  std::string k = flag;
  std::replace(k.begin(), k.end(), '-', '_');
  return k;
}

}  // namespace mmcdfsl
