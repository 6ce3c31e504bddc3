#pragma once

#include "moka/config.hpp"
#include "moka/training.hpp"

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace moka {

// Experiment protocols behind the CLI. Every command is a deterministic
// function of (config, seed, precision) except the wall-clock timing fields
// of the efficiency report. Results are also written under cfg.out_dir as
// JSON/CSV when write_files is set.

struct TrainCommandResult {
  TrainResult train;
  std::string checkpoint_path;
  std::int64_t trainable_params = 0;
  std::int64_t frozen_params = 0;
  double trainable_fraction = 0.0;
};

struct EvalCommandResult {
  double accuracy = 0.0;
  double mean_loss = 0.0;
  int samples = 0;
};

struct PartialRow {
  std::string label;
  double accuracy = 0.0;
};

struct PartialResult {
  std::vector<PartialRow> rows;
};

struct ComparisonRow {
  std::string variant;
  std::string cross_mode;
  int rank = 0;
  std::uint64_t seed = 0;
  double accuracy = 0.0;
  double final_train_loss = 0.0;
};

struct ComparisonSummary {
  std::string variant;
  std::string cross_mode;
  int rank = 0;
  double mean_accuracy = 0.0;
  double stderr_accuracy = 0.0;
};

struct ComparisonResult {
  std::vector<ComparisonRow> rows;
  std::vector<ComparisonSummary> summary;
};

struct EfficiencyRow {
  std::string variant;
  std::string cross_mode;
  std::int64_t trainable_params = 0;
  std::int64_t total_params = 0;
  double trainable_fraction = 0.0;
  int num_a = 0;
  int num_b = 0;
  std::uint64_t adapter_flops_analytic = 0;
  std::uint64_t adapter_flops_instrumented = 0;
  double flops_ratio_vs_lora = 0.0;
  double median_forward_ms = 0.0;
  double time_ratio_vs_lora = 0.0;
};

struct PaperScaleRow {
  std::string scenario;
  double moka_over_lora_flops = 0.0;
};

struct EfficiencyResult {
  std::vector<EfficiencyRow> rows;
  std::vector<PaperScaleRow> paper_scale;
};

struct DumpResult {
  std::vector<std::string> files;  // csv paths; each has a .json sidecar
  int records = 0;
};

TrainCommandResult run_train(const RunConfig& cfg, bool write_files = true);

EvalCommandResult run_eval(const RunConfig& cfg, const std::string& checkpoint_path);

// One row per modality subset; the full-modality reference row is always
// included. An empty subset list runs the standard battery (full, each
// single modality, none).
PartialResult run_partial(const RunConfig& cfg, const std::string& checkpoint_path,
                          const std::vector<std::set<std::string>>& subsets,
                          bool write_files = true);

ComparisonResult run_ablate(const RunConfig& cfg, bool write_files = true);
ComparisonResult run_variants(const RunConfig& cfg, bool write_files = true);
ComparisonResult run_rank_sweep(const RunConfig& cfg, bool write_files = true);

EfficiencyResult run_efficiency(const RunConfig& cfg, bool write_files = true,
                                int timing_passes = 100);

DumpResult run_dump_attention(const RunConfig& cfg,
                              const std::optional<std::string>& checkpoint_path,
                              int sample_index = 0, bool write_files = true);

GradCheckReport run_gradcheck(const RunConfig& cfg, bool write_files = true);

// Embedded full-scale reference table (also shipped as data/references.json);
// rendered alongside desk-scale results, never used as pass/fail thresholds.
const std::string& reference_metrics_json();

}  // namespace moka
