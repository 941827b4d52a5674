#pragma once

#include <filesystem>
#include <string>

#include "essa/adapters.hpp"
#include "essa/data.hpp"
#include "essa/eval.hpp"
#include "essa/pipeline.hpp"

namespace essa {

/// Parsed run configuration. Sections: [model], [adapter.essa],
/// [adapter.sa], [essa], [sa], [ttt], [data], [eval]. Unknown sections or
/// keys are rejected with file:line diagnostics. Every path is resolved
/// relative to the config file's directory (via [data] root).
struct RunConfig {
  std::string preset = "tiny";
  std::uint64_t seed = 42;

  AdapterSpec adapter_essa;  // default: full
  AdapterSpec adapter_sa;    // default: same as adapter_essa

  StageConfig essa;
  StageConfig sa;
  StageConfig ttt;

  std::filesystem::path data_root;

  std::size_t eval_k = 20;
  double eval_tau = 0.07;
  EvalMetric eval_metric = EvalMetric::accuracy;
  std::filesystem::path eval_gallery;
  std::filesystem::path eval_query;

  /// Dataset path for a stage resolved against data_root; empty when the
  /// stage section did not name one.
  std::filesystem::path stage_dataset(Stage stage) const;
};

RunConfig parse_run_config(const std::filesystem::path& path);

/// [synth] section: generator parameters for the `synth` subcommand.
SynthSpec parse_synth_spec(const std::filesystem::path& path);

}  // namespace essa
