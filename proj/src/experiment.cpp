#include "codistill/experiment.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace codistill {

namespace fs = std::filesystem;
using nlohmann::json;

json manifest_to_json(const RunManifest& m) {
  json j;
  j["version"] = m.version;
  j["library_version"] = m.library_version;
  j["status"] = m.status;
  j["seed"] = m.seed;
  j["start_iteration"] = m.start_iteration;
  j["end_iteration"] = m.end_iteration;
  j["config"] = m.config;
  j["metrics_path"] = m.metrics_path;
  j["small_checkpoint_path"] = m.small_checkpoint_path;
  j["large_checkpoint_path"] = m.large_checkpoint_path;
  return j;
}

RunManifest manifest_from_json(const json& j) {
  if (!j.is_object()) throw std::runtime_error("manifest: expected an object");
  RunManifest m;
  try {
    m.version = j.at("version").get<int>();
    m.library_version = j.at("library_version").get<std::string>();
    m.status = j.at("status").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.start_iteration = j.at("start_iteration").get<int>();
    m.end_iteration = j.at("end_iteration").get<int>();
    m.config = j.at("config");
    m.metrics_path = j.at("metrics_path").get<std::string>();
    m.small_checkpoint_path = j.at("small_checkpoint_path").get<std::string>();
    m.large_checkpoint_path = j.at("large_checkpoint_path").get<std::string>();
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("manifest: ") + e.what());
  }
  if (m.version != 1)
    throw std::runtime_error("manifest: unsupported version " +
                             std::to_string(m.version));
  if (m.status != "running" && m.status != "complete")
    throw std::runtime_error("manifest: unknown status '" + m.status + "'");
  return m;
}

RunManifest load_manifest(const fs::path& run_dir) {
  const fs::path path = run_dir / "manifest.json";
  std::ifstream in(path);
  if (!in)
    throw std::runtime_error("cannot open manifest '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("invalid JSON in '" + path.string() +
                             "': " + e.what());
  }
  return manifest_from_json(j);
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw std::runtime_error("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

TrainResult run_train(const TrainConfig& config, const fs::path& out_dir) {
  config.validate();
  if (config.mode == TrainMode::ct && !config.init_large_checkpoint)
    throw ConfigError("init_large_checkpoint", "required in ct mode");

  const Task task = config.task.build(config.N);
  TokenPolicy small =
      config.init_small_checkpoint
          ? load_policy_file(*config.init_small_checkpoint)
          : make_task_policy(task, config.small_context_order,
                             config.init_logit_noise, config.seed, 0);
  TokenPolicy large =
      config.init_large_checkpoint
          ? load_policy_file(*config.init_large_checkpoint)
          : make_task_policy(task, config.large_context_order,
                             config.init_logit_noise, config.seed, 1);

  fs::create_directories(out_dir);
  RunManifest manifest;
  manifest.status = "running";
  manifest.seed = config.seed;
  manifest.start_iteration = 0;
  manifest.end_iteration = 0;
  manifest.config = config_to_json(config);
  write_file_atomic(out_dir / "manifest.json",
                    manifest_to_json(manifest).dump(2) + "\n");

  TrainResult result = train(config, task, std::move(small), std::move(large));

  write_file_atomic(out_dir / manifest.metrics_path,
                    metrics_to_csv(result.metrics));
  {
    std::ostringstream small_out, large_out;
    save_policy(result.small, small_out);
    save_policy(result.large, large_out);
    write_file_atomic(out_dir / manifest.small_checkpoint_path,
                      small_out.str());
    write_file_atomic(out_dir / manifest.large_checkpoint_path,
                      large_out.str());
  }
  manifest.status = "complete";
  manifest.end_iteration = config.K;
  write_file_atomic(out_dir / "manifest.json",
                    manifest_to_json(manifest).dump(2) + "\n");
  return result;
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

namespace {

double metric_value(const MetricsRecord& m, const std::string& metric) {
  if (metric == "iter") return m.iteration;
  if (metric == "mean_reward_small") return m.mean_reward_small;
  if (metric == "mean_reward_large_eval") return m.mean_reward_large_eval;
  if (metric == "frac_zero_accuracy_groups") return m.frac_zero_accuracy_groups;
  if (metric == "mean_kd_reward") return m.mean_kd_reward;
  if (metric == "exact_kl_small_to_large") return m.exact_kl_small_to_large;
  if (metric == "clip_fraction_small") return m.clip_fraction_small;
  if (metric == "clip_fraction_large") return m.clip_fraction_large;
  if (metric == "wall_tokens_generated")
    return static_cast<double>(m.wall_tokens_generated);
  throw std::runtime_error("unknown metric column '" + metric +
                           "' (available: " + kMetricsCsvHeader + ")");
}

std::string group_label(const json& config_snapshot) {
  json without_seed = config_snapshot;
  without_seed.erase("seed");
  const std::string canon = without_seed.dump();
  std::uint64_t h = 0x6d657472ULL;
  for (unsigned char c : canon) h = mix64(h ^ c);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  std::string mode = "unknown";
  if (config_snapshot.contains("mode") && config_snapshot["mode"].is_string())
    mode = config_snapshot["mode"].get<std::string>();
  return mode + "-" + std::string(buf, 8);
}

}  // namespace

CompareReport compare_runs(const std::vector<fs::path>& run_dirs,
                           const std::string& metric) {
  if (run_dirs.empty()) throw std::runtime_error("no run directories given");
  metric_value(MetricsRecord{}, metric);  // validate the column up front

  CompareReport report;
  report.metric = metric;

  struct GroupAcc {
    int runs = 0;
    double final_sum = 0.0;
    double best_sum = 0.0;
  };
  std::vector<std::string> group_order;
  std::map<std::string, GroupAcc> group_acc;

  for (const auto& dir : run_dirs) {
    const RunManifest manifest = load_manifest(dir);
    const fs::path metrics_path = dir / manifest.metrics_path;
    std::ifstream in(metrics_path, std::ios::binary);
    if (!in)
      throw std::runtime_error("cannot open metrics '" + metrics_path.string() +
                               "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    const auto metrics = metrics_from_csv(buf.str());
    if (metrics.empty())
      throw std::runtime_error("run '" + dir.string() +
                               "' has no metrics rows");

    RunSummary summary;
    summary.dir = dir.string();
    summary.seed = manifest.seed;
    summary.group_label = group_label(manifest.config);
    summary.final_value = metric_value(metrics.back(), metric);
    summary.best_value = summary.final_value;
    for (const auto& m : metrics)
      summary.best_value = std::max(summary.best_value, metric_value(m, metric));

    auto [it, inserted] = group_acc.try_emplace(summary.group_label);
    if (inserted) group_order.push_back(summary.group_label);
    it->second.runs += 1;
    it->second.final_sum += summary.final_value;
    it->second.best_sum += summary.best_value;
    report.runs.push_back(std::move(summary));
  }

  for (const auto& label : group_order) {
    const GroupAcc& acc = group_acc.at(label);
    GroupSummary g;
    g.label = label;
    g.runs = acc.runs;
    g.final_mean = acc.final_sum / acc.runs;
    g.best_mean = acc.best_sum / acc.runs;
    report.groups.push_back(std::move(g));
  }
  return report;
}

std::string CompareReport::to_csv() const {
  std::string out = "kind,label,runs,final,best\n";
  for (const auto& r : runs) {
    out += "run," + r.dir + ",1," + format_double(r.final_value) + "," +
           format_double(r.best_value) + "\n";
  }
  for (const auto& g : groups) {
    out += "group," + g.label + "," + std::to_string(g.runs) + "," +
           format_double(g.final_mean) + "," + format_double(g.best_mean) +
           "\n";
  }
  return out;
}

}  // namespace codistill
