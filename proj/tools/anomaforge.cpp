#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "anomaforge/commands.hpp"
#include "anomaforge/config.hpp"
#include "anomaforge/error.hpp"

using namespace anomaforge;

int main(int argc, char** argv) {
  CLI::App app{"anomaforge: diffusion-synthesised defects and a teacher-student detector"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  bool visualize = false;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "key = value config file")->required();
    sub->add_option("--set", overrides, "override key=value (repeatable)")->take_all();
  };
  auto* train_ddpm = app.add_subcommand("train-ddpm", "train the diffusion denoiser on normal images");
  auto* synthesize = app.add_subcommand("synthesize", "build the (normal, defect, mask) triplet store");
  auto* train_detector = app.add_subcommand("train-detector", "jointly train student and segmentation head");
  auto* evaluate = app.add_subcommand("evaluate", "score the test split and write the report");
  auto* visualize_cmd = app.add_subcommand("visualize", "write overlay heatmaps for the test split");
  for (auto* sub : {train_ddpm, synthesize, train_detector, evaluate, visualize_cmd}) add_common(sub);
  evaluate->add_flag("--visualize", visualize, "also write overlay heatmaps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  return run_guarded(
      [&] {
        RunConfig cfg = RunConfig::load(config_path);
        cfg.apply(overrides);
        if (train_ddpm->parsed()) {
          auto r = cmd_train_ddpm(cfg, std::cout);
          std::cout << "checkpoint " << r.checkpoint.string() << '\n';
        } else if (synthesize->parsed()) {
          cmd_synthesize(cfg, std::cout);
        } else if (train_detector->parsed()) {
          auto r = cmd_train_detector(cfg, std::cout);
          std::cout << "checkpoint " << r.checkpoint.string() << '\n';
        } else if (evaluate->parsed()) {
          auto r = cmd_evaluate(cfg, visualize, std::cout);
          std::cout << "report " << r.json_path.string() << '\n';
        } else if (visualize_cmd->parsed()) {
          cmd_visualize(cfg, std::cout);
        }
      },
      std::cerr);
}
