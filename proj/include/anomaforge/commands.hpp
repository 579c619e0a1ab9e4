#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>

#include "anomaforge/config.hpp"
#include "anomaforge/metrics.hpp"

namespace anomaforge {

struct DdpmRunResult {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
  int steps = 0;
  double final_loss = 0.0;
};

struct SynthesizeResult {
  std::filesystem::path store;
  std::size_t count = 0;
  double mean_area_fraction = 0.0;
  int sampling_t_anom = 0;
};

struct DetectorRunResult {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
  std::string csv_header;
  int steps = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::string teacher_hash_before;
  std::string teacher_hash_after;
};

struct EvaluateResult {
  metrics::EvalReport report;
  std::filesystem::path json_path;
  std::filesystem::path csv_path;
  std::filesystem::path scores_path;
};

/// Step of the sampling schedule that corresponds to cfg.t_anom on the full chain.
int sampling_t_anom(const RunConfig& cfg);

/// Each command validates the config, writes only below cfg.work_path()
/// and throws ConfigError, DataError or NumericError on failure.
DdpmRunResult cmd_train_ddpm(const RunConfig& cfg, std::ostream& log);
SynthesizeResult cmd_synthesize(const RunConfig& cfg, std::ostream& log);
DetectorRunResult cmd_train_detector(const RunConfig& cfg, std::ostream& log);
EvaluateResult cmd_evaluate(const RunConfig& cfg, bool visualize, std::ostream& log);
/// Overlay heatmaps for every test image under eval_dir()/overlays.
std::size_t cmd_visualize(const RunConfig& cfg, std::ostream& log);

/// Runs `body` and maps exceptions to exit codes: 0 ok, 2 config, 3 data,
/// 4 numeric, 1 anything else. The message goes to `err`.
int run_guarded(const std::function<void()>& body, std::ostream& err);

}  // namespace anomaforge
