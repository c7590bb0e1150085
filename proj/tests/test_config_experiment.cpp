#include <doctest/doctest.h>

#include <sys/wait.h>

#include <bit>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "codistill/experiment.hpp"

using namespace codistill;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("codistill_tests_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string("\"") + CODISTILL_CLI_PATH + "\" " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WEXITSTATUS(rc);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.alpha = 1.0;
  c.T = 0;
  c.H = 0;
  c.M = 6;
  c.G = 4;
  c.N = 4;
  c.K = 3;
  c.B = 2;
  c.eta = 2.0;
  c.seed = 1;
  c.eval_every = 1;
  c.eval_samples = 16;
  c.task.k = 2;
  c.task.L = 2;
  return c;
}

std::string field_of_json(const nlohmann::json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.field;
  }
  return "";
}

}  // namespace

TEST_CASE("enum names round trip") {
  for (TrainMode m : {TrainMode::codistill, TrainMode::grpo_small,
                      TrainMode::grpo_large, TrainMode::kdrl_frozen_teacher,
                      TrainMode::ct})
    CHECK(train_mode_from_string(to_string(m)) == m);
  for (AdvantageMode m :
       {AdvantageMode::mean_only, AdvantageMode::std_normalized})
    CHECK(advantage_mode_from_string(to_string(m)) == m);
  for (HintMode m :
       {HintMode::treat_as_small, HintMode::split_ratio, HintMode::skip_hint})
    CHECK(hint_mode_from_string(to_string(m)) == m);
  for (KlEstimator e : {KlEstimator::log_ratio, KlEstimator::k3})
    CHECK(kl_estimator_from_string(to_string(e)) == e);
  CHECK_THROWS_WITH(train_mode_from_string("sft"),
                    doctest::Contains("unknown value 'sft'"));
  CHECK_THROWS_WITH(train_mode_from_string("sft"),
                    doctest::Contains("codistill"));
}

TEST_CASE("config json round trip is lossless") {
  CHECK(config_to_json(config_from_json(nlohmann::json::object())) ==
        config_to_json(TrainConfig{}));

  TrainConfig c;
  c.alpha = 0.25;
  c.T = 3;
  c.H = 7;
  c.M = 12;
  c.G = 6;
  c.N = 7;
  c.epsilon = 0.15;
  c.eta = 0.5;
  c.K = 41;
  c.B = 3;
  c.seed = (1ull << 63) + 5;
  c.mode = TrainMode::kdrl_frozen_teacher;
  c.advantage_mode_small = AdvantageMode::std_normalized;
  c.hint_mode = HintMode::split_ratio;
  c.kl_estimator = KlEstimator::k3;
  c.inner_epochs = 2;
  c.downsample = false;
  c.update_large = false;
  c.differentiate_reward = true;
  c.eval_every = 9;
  c.eval_samples = 77;
  c.small_context_order = 0;
  c.large_context_order = 3;
  c.init_logit_noise = 0.4;
  c.init_small_checkpoint = "a.json";
  c.init_large_checkpoint = "b.json";
  c.task.family = "modsum";
  c.task.k = 5;
  c.task.L = 2;
  c.task.format_rewards = false;

  const nlohmann::json j = config_to_json(c);
  const TrainConfig back = config_from_json(j);
  CHECK(config_to_json(back) == j);
  CHECK(back.seed == c.seed);
  CHECK(back.init_small_checkpoint == c.init_small_checkpoint);
  CHECK(back.mode == TrainMode::kdrl_frozen_teacher);
  CHECK(back.task.k == 5);

  // null clears a checkpoint path
  nlohmann::json cleared = j;
  cleared["init_small_checkpoint"] = nullptr;
  CHECK_FALSE(config_from_json(cleared).init_small_checkpoint.has_value());
}

TEST_CASE("config parsing names bad fields") {
  nlohmann::json j = config_to_json(TrainConfig{});
  j["bogus"] = 1;
  CHECK(field_of_json(j) == "bogus");

  j = config_to_json(TrainConfig{});
  j["task"]["zzz"] = true;
  CHECK(field_of_json(j) == "task.zzz");

  j = config_to_json(TrainConfig{});
  j["alpha"] = "high";
  CHECK(field_of_json(j) == "alpha");

  j = config_to_json(TrainConfig{});
  j["K"] = 2.5;
  CHECK(field_of_json(j) == "K");

  j = config_to_json(TrainConfig{});
  j["seed"] = -4;
  CHECK(field_of_json(j) == "seed");

  j = config_to_json(TrainConfig{});
  j["downsample"] = "yes";
  CHECK(field_of_json(j) == "downsample");

  j = config_to_json(TrainConfig{});
  j["mode"] = "sft";
  CHECK(field_of_json(j) == "mode");

  CHECK(field_of_json(nlohmann::json::array()) == "config");
}

TEST_CASE("config files load and save") {
  const fs::path dir = fresh_dir("configfile");
  const TrainConfig c = tiny_config();
  save_config_file(c, (dir / "c.json").string());
  const TrainConfig back = load_config_file((dir / "c.json").string());
  CHECK(config_to_json(back) == config_to_json(c));

  try {
    load_config_file((dir / "missing.json").string());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field == "file");
  }

  std::ofstream((dir / "broken.json")) << "{ not json";
  try {
    load_config_file((dir / "broken.json").string());
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field == "file");
    CHECK(std::string(e.what()).find("invalid JSON") != std::string::npos);
  }
}

TEST_CASE("format_double emits shortest round-tripping decimals") {
  CHECK(format_double(0.0) == "0");
  CHECK(format_double(1.5) == "1.5");
  CHECK(format_double(0.1) == "0.1");
  for (double x : {1.0 / 3.0, 1e-300, 1.7976931348623157e308, -0.0,
                   0.37810547172687092, 123456789.25}) {
    const std::string s = format_double(x);
    CHECK(std::bit_cast<std::uint64_t>(std::stod(s)) ==
          std::bit_cast<std::uint64_t>(x));
  }
}

TEST_CASE("metrics csv preserves doubles bit for bit") {
  std::vector<MetricsRecord> rows(2);
  rows[0].iteration = 1;
  rows[0].mean_reward_small = 1.0 / 3.0;
  rows[0].mean_reward_large_eval = 1e-300;
  rows[0].frac_zero_accuracy_groups = -0.0;
  rows[0].mean_kd_reward = -0.29389333245105947;
  rows[0].exact_kl_small_to_large = 1.7976931348623157e308;
  rows[0].clip_fraction_small = 0.1;
  rows[0].clip_fraction_large = 1.0;
  rows[0].wall_tokens_generated = 9007199254740992;  // 2^53
  rows[1].iteration = 2;
  rows[1].mean_reward_small = 0.37810547172687092;
  rows[1].wall_tokens_generated = 9007199254740993;

  const std::string csv = metrics_to_csv(rows);
  const auto back = metrics_from_csv(csv);
  REQUIRE(back.size() == 2);
  CHECK(std::bit_cast<std::uint64_t>(back[0].mean_reward_small) ==
        std::bit_cast<std::uint64_t>(rows[0].mean_reward_small));
  CHECK(std::bit_cast<std::uint64_t>(back[0].frac_zero_accuracy_groups) ==
        std::bit_cast<std::uint64_t>(-0.0));
  CHECK(back[0].exact_kl_small_to_large == rows[0].exact_kl_small_to_large);
  CHECK(back[0].wall_tokens_generated == 9007199254740992);
  CHECK(metrics_to_csv(back) == csv);
}

TEST_CASE("manifest round trip and validation") {
  RunManifest m;
  m.status = "complete";
  m.seed = 42;
  m.start_iteration = 0;
  m.end_iteration = 7;
  m.config = config_to_json(tiny_config());
  const RunManifest back = manifest_from_json(manifest_to_json(m));
  CHECK(back.version == 1);
  CHECK(back.library_version == kVersion);
  CHECK(back.status == "complete");
  CHECK(back.seed == 42);
  CHECK(back.end_iteration == 7);
  CHECK(back.config == m.config);
  CHECK(back.metrics_path == "metrics.csv");

  nlohmann::json bad_status = manifest_to_json(m);
  bad_status["status"] = "exploded";
  CHECK_THROWS_WITH(manifest_from_json(bad_status),
                    doctest::Contains("unknown status"));
  nlohmann::json bad_version = manifest_to_json(m);
  bad_version["version"] = 9;
  CHECK_THROWS_WITH(manifest_from_json(bad_version),
                    doctest::Contains("version"));
  CHECK_THROWS_WITH(load_manifest(fs::temp_directory_path() / "no_such_run"),
                    doctest::Contains("cannot open manifest"));
}

TEST_CASE("atomic writes leave no temp files") {
  const fs::path dir = fresh_dir("atomic");
  write_file_atomic(dir / "x.txt", "payload");
  CHECK(slurp(dir / "x.txt") == "payload");
  write_file_atomic(dir / "x.txt", "replaced");
  CHECK(slurp(dir / "x.txt") == "replaced");
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    (void)entry;
    ++files;
  }
  CHECK(files == 1);
}

TEST_CASE("run_train writes a complete reproducible run directory") {
  const TrainConfig c = tiny_config();
  const fs::path dir_a = fresh_dir("run_a");
  const fs::path dir_b = fresh_dir("run_b");
  const TrainResult result = run_train(c, dir_a);
  run_train(c, dir_b);

  const RunManifest manifest = load_manifest(dir_a);
  CHECK(manifest.status == "complete");
  CHECK(manifest.seed == c.seed);
  CHECK(manifest.end_iteration == c.K);
  CHECK(manifest.config == config_to_json(c));

  const auto metrics = metrics_from_csv(slurp(dir_a / "metrics.csv"));
  REQUIRE(metrics.size() == 3);
  CHECK(metrics.back().iteration == 3);

  CHECK(load_policy_file((dir_a / "small_final.json").string()) == result.small);
  CHECK(load_policy_file((dir_a / "large_final.json").string()) == result.large);

  // same config + seed -> byte-identical artifacts
  CHECK(slurp(dir_a / "metrics.csv") == slurp(dir_b / "metrics.csv"));
  CHECK(slurp(dir_a / "small_final.json") == slurp(dir_b / "small_final.json"));
  CHECK(slurp(dir_a / "manifest.json") == slurp(dir_b / "manifest.json"));
}

TEST_CASE("run_train honours checkpoint inits") {
  const fs::path dir = fresh_dir("run_ckpt");
  TrainConfig c = tiny_config();
  c.K = 0;
  c.H = 0;
  const Task task = c.task.build(c.N);
  TokenPolicy init = make_task_policy(task, c.small_context_order, 0.7, 99, 0);
  save_policy_file(init, (dir / "init_small.json").string());
  c.init_small_checkpoint = (dir / "init_small.json").string();
  const TrainResult result = run_train(c, dir / "out");
  CHECK(result.small == init);

  TrainConfig ct = tiny_config();
  ct.mode = TrainMode::ct;
  ct.M = ct.G;
  try {
    run_train(ct, dir / "ct_out");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.field == "init_large_checkpoint");
  }
}

TEST_CASE("compare_runs groups by config and averages seeds") {
  const fs::path base = fresh_dir("compare");
  TrainConfig c = tiny_config();
  run_train(c, base / "s1");
  c.seed = 2;
  run_train(c, base / "s2");
  TrainConfig other = c;
  other.G = 6;
  other.M = 6;
  run_train(other, base / "g6");

  const CompareReport report = compare_runs(
      {base / "s1", base / "s2", base / "g6"}, "mean_reward_small");
  CHECK(report.metric == "mean_reward_small");
  REQUIRE(report.runs.size() == 3);
  REQUIRE(report.groups.size() == 2);
  CHECK(report.runs[0].group_label == report.runs[1].group_label);
  CHECK(report.runs[0].group_label != report.runs[2].group_label);
  CHECK(report.groups[0].runs == 2);
  CHECK(report.groups[1].runs == 1);
  const double expect_final_mean =
      0.5 * (report.runs[0].final_value + report.runs[1].final_value);
  CHECK(report.groups[0].final_mean == doctest::Approx(expect_final_mean));
  for (const auto& run : report.runs) CHECK(run.best_value >= run.final_value);

  const std::string csv = report.to_csv();
  CHECK(csv.rfind("kind,label,runs,final,best\n", 0) == 0);

  CHECK_THROWS_WITH(compare_runs({base / "s1"}, "zzz"),
                    doctest::Contains("unknown metric column 'zzz'"));
  CHECK_THROWS_WITH(compare_runs({base / "s1"}, "zzz"),
                    doctest::Contains("mean_reward_small"));
  CHECK_THROWS_WITH(compare_runs({}, "mean_reward_small"),
                    doctest::Contains("no run directories"));
}

TEST_CASE("cli exit codes") {
  const fs::path dir = fresh_dir("cli");
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 2);                       // missing subcommand
  CHECK(run_cli("train --out x") == 2);          // missing --config
  CHECK(run_cli("train --config /nonexistent.json --out " +
                (dir / "r0").string()) == 2);
  CHECK(run_cli("verify --which nonsense") == 2);
  CHECK(run_cli("frobnicate") == 2);

  TrainConfig c = tiny_config();
  c.K = 0;
  c.H = 0;
  save_config_file(c, (dir / "k0.json").string());
  CHECK(run_cli("train --config " + (dir / "k0.json").string() + " --out " +
                (dir / "k0_run").string()) == 0);
  CHECK(slurp(dir / "k0_run" / "metrics.csv") ==
        std::string(kMetricsCsvHeader) + "\n");

  TrainConfig boom = tiny_config();
  boom.eta = 1e300;
  boom.K = 5;  // the blow-up needs a few compounding steps
  save_config_file(boom, (dir / "boom.json").string());
  CHECK(run_cli("train --config " + (dir / "boom.json").string() + " --out " +
                (dir / "boom_run").string()) == 3);

  save_config_file(tiny_config(), (dir / "tiny.json").string());
  CHECK(run_cli("train --config " + (dir / "tiny.json").string() + " --out " +
                (dir / "r1").string()) == 0);
  CHECK(run_cli("eval --checkpoint " + (dir / "r1" / "small_final.json").string() +
                " --config " + (dir / "tiny.json").string() + " --samples 16") ==
        0);
  CHECK(run_cli("compare --metric mean_reward_small " + (dir / "r1").string()) ==
        0);
  CHECK(run_cli("compare --metric zzz " + (dir / "r1").string()) == 1);

  CHECK(run_cli("verify --which theorem1 --instances 3") == 0);
  CHECK(run_cli("verify --which fd --instances 5") == 0);
}

TEST_CASE("cli ablation sweep produces one run per variant") {
  const fs::path dir = fresh_dir("ablate");
  TrainConfig c = tiny_config();
  c.K = 2;
  c.T = 1;
  c.H = 1;
  save_config_file(c, (dir / "base.json").string());
  CHECK(run_cli("ablate --config " + (dir / "base.json").string() + " --out " +
                (dir / "sweep").string()) == 0);
  for (const char* name : {"base", "alpha0_nodownsample", "hints_forever",
                           "skip_hint", "k3_reward"}) {
    CHECK(load_manifest(dir / "sweep" / name).status == "complete");
    CHECK(fs::exists(dir / "sweep" / name / "metrics.csv"));
  }
}
