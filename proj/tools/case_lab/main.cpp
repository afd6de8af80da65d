#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cli/commands.hpp"

using namespace caselab::cli;

namespace {

// Flag values are kept as strings and applied through set_value after the
// config file, so flags always win.
struct ConfigFlag {
  const char* flag;
  const char* key;
  const char* type;
};

const ConfigFlag kConfigFlags[] = {
    {"--seed", "seed", "N"},
    {"--per-class", "per_class", "N"},
    {"--epochs", "epochs", "N"},
    {"--learning-rate,--lr", "learning_rate", "REAL"},
    {"--k-contrast", "k_contrast", "N"},
    {"--beta", "beta", "N"},
    {"--fraction", "fraction", "REAL"},
    {"--tau", "tau", "REAL"},
    {"--methods", "methods", "LIST|all"},
    {"--attribution-layer", "attribution_layer", "N|default"},
    {"--case-weighting", "case_weighting", "pooled|elementwise"},
    {"--ablation-fill", "ablation_fill", "mean|zero"},
    {"--output-dir", "output_dir", "PATH"},
    {"--threads", "threads", "N"},
    {"--weights", "weights", "PATH"},
    {"--data", "data", "PATH"},
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive saliency workbench on a synthetic shapes task", "case-lab"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for every command");

  std::string config_path;
  bool no_timestamp = false;
  app.add_option("--config", config_path, "Config file of 'key = value' lines");
  app.add_flag("--no-timestamp", no_timestamp, "Omit the generation time from reports");
  std::map<std::string, std::string> raw;
  for (const auto& f : kConfigFlags) {
    app.add_option_function<std::string>(
           f.flag, [&raw, k = std::string(f.key)](const std::string& v) { raw[k] = v; },
           std::string("Overrides '") + f.key + "'")
        ->type_name(f.type)
        ->group("Run configuration");
  }

  std::optional<std::string> export_path;
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  gen->add_option("--export", export_path, "Write a CASED1 container to this path");

  app.add_subcommand("train", "Train the classifier; writes weights and history.csv");

  SaliencyRequest req;
  auto* sal = app.add_subcommand("saliency", "Export saliency maps for one test image");
  sal->add_option("--image", req.image_index, "Index into the test split")->capture_default_str();
  sal->add_option("--class", req.class_spec, "top1, top2, top2pair or a class index")->capture_default_str();

  app.add_subcommand("rq1", "Class sensitivity: top-1 vs top-2 agreement with a Wilcoxon test");
  app.add_subcommand("rq2", "Fidelity: confidence drop after ablating salient pixels");
  app.add_subcommand("sparsity", "Active channel counts per class");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    RunConfig config;
    if (!config_path.empty()) apply_config_file(config, config_path);
    for (const auto& [key, value] : raw) set_value(config, key, value);
    config.timestamp = !no_timestamp;

    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen-data") {
      cmd_gen_data(config, export_path ? std::optional<std::filesystem::path>(*export_path) : std::nullopt,
                   std::cout);
    } else if (cmd == "train") {
      cmd_train(config, std::cout);
    } else if (cmd == "saliency") {
      cmd_saliency(config, req, std::cout);
    } else if (cmd == "rq1") {
      cmd_rq1(config, std::cout);
    } else if (cmd == "rq2") {
      cmd_rq2(config, std::cout);
    } else {
      cmd_sparsity(config, std::cout);
    }
  } catch (const std::exception& e) {
    std::cout.flush();
    std::fprintf(stderr, "case-lab: error: %s\n", e.what());
    return exit_code_for(e);
  }
  return 0;
}
