#pragma once

// Run directories and cross-run comparison.
//
// A run directory holds
//   manifest.json      status, seed, iteration range, config snapshot, paths
//   metrics.csv        one row per iteration (schema kMetricsCsvHeader)
//   small_final.json   final small-policy checkpoint
//   large_final.json   final large-policy checkpoint
// The manifest is written atomically (temp file + rename) with status
// "running" before training and rewritten with status "complete" afterwards,
// so an interrupted run is detectable.  No timestamps anywhere: two runs of
// the same config and seed produce byte-identical directories.

#include <filesystem>

#include "codistill/config.hpp"

namespace codistill {

struct RunManifest {
  int version = 1;
  std::string library_version = kVersion;
  std::string status = "running";  // "running" | "complete"
  std::uint64_t seed = 0;
  int start_iteration = 0;
  int end_iteration = 0;  // config K once complete
  nlohmann::json config;  // full snapshot (config_to_json)
  std::string metrics_path = "metrics.csv";
  std::string small_checkpoint_path = "small_final.json";
  std::string large_checkpoint_path = "large_final.json";
};

nlohmann::json manifest_to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::json& j);
RunManifest load_manifest(const std::filesystem::path& run_dir);

// Writes content to path via a temp sibling + rename, so readers never see a
// partial file.
void write_file_atomic(const std::filesystem::path& path,
                       const std::string& content);

// Executes one training run into out_dir (created if needed) and returns the
// in-memory result.  Initial policies come from the config's checkpoint
// paths when set, otherwise from make_task_policy; ct mode requires
// init_large_checkpoint.
TrainResult run_train(const TrainConfig& config,
                      const std::filesystem::path& out_dir);

struct RunSummary {
  std::string dir;
  std::uint64_t seed = 0;
  std::string group_label;  // config identity with the seed removed
  double final_value = 0.0;
  double best_value = 0.0;  // max over iterations
};

struct GroupSummary {
  std::string label;
  int runs = 0;
  double final_mean = 0.0;
  double best_mean = 0.0;
};

struct CompareReport {
  std::string metric;
  std::vector<RunSummary> runs;
  std::vector<GroupSummary> groups;  // seed-averaged, label order of first use

  // "kind,label,runs,final,best" rows: one per run, then one per group.
  std::string to_csv() const;
};

// Reads each run directory's manifest + metrics and summarizes the chosen
// metric column.  Runs sharing a config-minus-seed are averaged into one
// group.  Throws when the metric is not a CSV column, naming both the metric
// and the available columns.
CompareReport compare_runs(const std::vector<std::filesystem::path>& run_dirs,
                           const std::string& metric);

}  // namespace codistill
