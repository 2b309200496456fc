// Command-line entry point: one subcommand per pipeline stage.
#include <CLI11.hpp>

#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mmcdfsl/config.hpp"
#include "mmcdfsl/errors.hpp"
#include "mmcdfsl/stages.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 2, kNumeric = 3, kIo = 4, kInternal = 1 };

}  // namespace

int main(int argc, char** argv) {
  using namespace mmcdfsl;

  CLI::App app{"Multimodal cross-domain few-shot pipeline on a synthetic benchmark"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_file;
  bool print_config = false;
  app.add_option("--config", config_file, "Config file of `key = value` lines")->check(CLI::ExistingFile);
  app.add_flag("--print-config", print_config, "Print the resolved configuration before running");

  std::map<std::string, std::string> flag_values;
  for (const ConfigKey& k : config_keys())
    app.add_option("--" + key_to_flag(k.name), flag_values[k.name], k.doc + " [default: " + k.default_value + "]");

  const std::vector<std::pair<std::string, std::string>> subcommands = {
      {"gen-data", "Generate the synthetic dataset"},
      {"pretrain", "Pretrain one modality teacher (--modality)"},
      {"distill", "Distill the teachers into the RGB student"},
      {"fewshot-eval", "Episodic few-shot evaluation of the student"},
      {"tradeoff", "Accuracy / wall clock / FLOPs sweep over mask ratios and ensemble sizes"},
      {"cost", "Analytic FLOPs and measured wall clock"},
      {"ablate", "Full method versus ablation variants over several seeds"},
      {"export-embeddings", "Pooled student features as CSV"},
      {"pipeline", "gen-data, pretrain, distill and fewshot-eval in order"},
  };
  for (const auto& [name, help] : subcommands) app.add_subcommand(name, help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const ConfigKey& k : config_keys())
      if (app.count("--" + key_to_flag(k.name)) > 0) overrides.emplace_back(k.name, flag_values[k.name]);
    const RunConfig cfg =
        load_config(config_file.empty() ? std::nullopt : std::optional<fs::path>(config_file), overrides);
    if (print_config) std::cout << "# config_hash=" << cfg.hash() << '\n' << cfg.dump();

    const std::string cmd = app.get_subcommands().front()->get_name();
    std::ostream& log = std::cout;
    if (cmd == "gen-data") stage_gen_data(cfg, log);
    else if (cmd == "pretrain") stage_pretrain(cfg, log);
    else if (cmd == "distill") stage_distill(cfg, log);
    else if (cmd == "fewshot-eval") stage_fewshot_eval(cfg, log);
    else if (cmd == "tradeoff") stage_tradeoff(cfg, log);
    else if (cmd == "cost") stage_cost(cfg, log);
    else if (cmd == "ablate") stage_ablate(cfg, log);
    else if (cmd == "export-embeddings") stage_export_embeddings(cfg, log);
    else if (cmd == "pipeline") run_pipeline(cfg, log);
    return kOk;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const EpisodeError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return kNumeric;
  } catch (const IoError& e) {
    std::cerr << "I/O failure: " << e.what() << '\n';
    return kIo;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}
