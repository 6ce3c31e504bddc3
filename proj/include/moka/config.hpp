#pragma once

#include "moka/adapters.hpp"
#include "moka/network.hpp"
#include "moka/training.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace moka {

// A run is a pure function of its RunConfig plus the code version. Parsing
// is strict: unknown keys are hard errors, missing keys take the documented
// defaults.
struct RunConfig {
  std::string variant = "moka";
  std::string cross_mode = "task_centric";  // "none" for non-moka variants
  int rank = 4;
  std::map<std::string, double> lambdas;  // per non-text modality, default 1.0
  double lambda_text = 1.0;
  double lambda_extra = 1.0;
  std::string extra_query;

  std::uint64_t seed = 1234;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string precision = "f32";
  int steps = 2000;
  int batch_size = 16;
  int eval_interval = 200;
  int eval_samples = 256;
  int log_interval = 50;
  std::string out_dir = "runs/out";

  NetworkDims network;
  SyntheticTaskSpec task;
  OptimizerConfig optimizer;

  AdapterSpec adapter_spec() const;
  TrainOptions train_options() const;
  void validate() const;
};

RunConfig parse_config(const std::string& text);
RunConfig parse_config_file(const std::string& path);
std::string emit_config(const RunConfig& cfg);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace moka
