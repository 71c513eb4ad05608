#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "hybridgen/harness.hpp"

using namespace hg;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() /
           ("hybridgen_harness_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json toy_config(std::size_t steps = 5) {
  Json j = Json::parse(R"({
    "name": "toy",
    "method": "hybrid",
    "seed": 1,
    "pipeline": {"kind": "toy", "width": 4, "height": 4, "task": "normal"},
    "validation": {"size": 4, "seed": 5, "beta": {"width": [0.5], "tilt_x": [0.5], "tilt_y": [-0.3]}},
    "model": {"hidden": 0, "init_scale": 0.1},
    "train": {"learning_rate": 0.1},
    "optimizer": {"samples_per_step": 2, "steps": 5, "learning_rate": 0.02},
    "probes": {"count": 4, "sigma": 0.02}
  })");
  j["optimizer"]["steps"] = steps;
  return j;
}

fs::path write_json(const fs::path& path, const Json& j) {
  std::ofstream(path) << j.dump(2);
  return path;
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "hybridgen");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return cli_main(static_cast<int>(argv.size()), argv.data());
}

std::string error_field(const Json& j) {
  try {
    config_from_json(j);
  } catch (const ConfigError& e) {
    return e.field;
  }
  return "<accepted>";
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

}  // namespace

TEST(Config, DefaultsAccepted) {
  const auto c = config_from_json(Json::object());
  EXPECT_EQ(c.method, "hybrid");
  EXPECT_EQ(c.pipeline.kind, "toy");
}

TEST(Config, UnknownKeysNamed) {
  EXPECT_EQ(error_field(Json{{"optimiser", Json::object()}}), "optimiser");
  EXPECT_EQ(error_field(Json{{"optimizer", {{"stepz", 3}}}}), "optimizer.stepz");
  EXPECT_EQ(error_field(Json{{"probes", {{"count", 2}, {"shared_probes", true}}}}), "probes.shared_probes");
}

TEST(Config, RangeAndTypeErrorsNamed) {
  EXPECT_EQ(error_field(Json{{"optimizer", {{"decay", 1.0}}}}), "optimizer.decay");
  EXPECT_EQ(error_field(Json{{"optimizer", {{"epsilon", 0.0}}}}), "optimizer.epsilon");
  EXPECT_EQ(error_field(Json{{"optimizer", {{"learning_rate", -0.1}}}}), "optimizer.learning_rate");
  EXPECT_EQ(error_field(Json{{"optimizer", {{"steps", 0}}}}), "optimizer.steps");
  EXPECT_EQ(error_field(Json{{"optimizer", {{"samples_per_step", 2.5}}}}), "optimizer.samples_per_step");
  EXPECT_EQ(error_field(Json{{"seed", -1}}), "seed");
  EXPECT_EQ(error_field(Json{{"method", "adam"}}), "method");
  EXPECT_EQ(error_field(Json{{"pipeline", {{"task", "albedo"}}}}), "pipeline.task");
  EXPECT_EQ(error_field(Json{{"probes", {{"sigma", 0}}}}), "probes.sigma");
  EXPECT_EQ(error_field(Json{{"model", {{"activation", "gelu"}}}}), "model.activation");
}

TEST(Config, GammaZeroAllowed) { EXPECT_EQ(error_field(Json{{"optimizer", {{"learning_rate", 0.0}}}}), "<accepted>"); }

TEST(Config, BetaBlocksValidatedAgainstLayout) {
  const Json csg = {{"kind", "csg"}};
  EXPECT_EQ(error_field(Json{{"pipeline", csg}, {"start_beta", {{"scale", {0, 0, 9.0, 0.01, 0.01, 0.01}}}}}),
            "start_beta.scale[2]");
  EXPECT_EQ(error_field(Json{{"pipeline", csg}, {"start_beta", {{"scale", {0, 0}}}}}), "start_beta.scale");
  EXPECT_EQ(error_field(Json{{"pipeline", csg}, {"start_beta", {{"yaw", {0}}}}}), "start_beta.yaw");
  EXPECT_EQ(error_field(Json{{"validation", {{"beta", {{"tilt_x", {"a"}}}}}}}), "validation.beta.tilt_x[0]");
  // toy blocks are not csg blocks
  EXPECT_EQ(error_field(Json{{"pipeline", csg}, {"start_beta", {{"tilt_x", {0.1}}}}}), "start_beta.tilt_x");
}

TEST(Config, CrossFieldRules) {
  EXPECT_EQ(error_field(Json{{"pipeline", {{"kind", "csg"}}}, {"optimizer", {{"jacobian", "analytic"}}}}),
            "optimizer.jacobian");
  EXPECT_EQ(error_field(Json{{"pipeline", {{"camera_block", true}}}}), "pipeline.camera_block");
  EXPECT_EQ(error_field(Json{{"method", "fixed_beta"}}), "fixed_beta.dataset_size");
  EXPECT_EQ(error_field(Json{{"method", "fixed_beta"}, {"fixed_beta", {{"dataset_size", 4}, {"generator_budget", 40}}}}),
            "fixed_beta.generator_budget");
  EXPECT_EQ(error_field(Json{{"method", "fixed_beta"}, {"fixed_beta", {{"draws", 10}, {"generator_budget", 5}}}}),
            "fixed_beta.generator_budget");
}

TEST(Config, RoundTrip) {
  Json j = toy_config();
  j["pipeline"]["kind"] = "csg";
  j["pipeline"]["camera_block"] = true;
  j["validation"]["beta"] = {{"yaw", {0.5, 0.25, 0.25, 0.0, 2.0, -2.0, 0.5, 0.5, 0.5}}};
  j["start_beta"] = {{"expand_prob", {0.1}}};
  const auto c = config_from_json(j);
  const Json once = config_to_json(c);
  EXPECT_EQ(config_to_json(config_from_json(once)), once);
}

TEST(Config, LoadReportsMissingFileAndBadJson) {
  TempDir tmp;
  EXPECT_THROW(load_config(tmp.path / "absent.json"), ConfigError);
  std::ofstream(tmp.path / "bad.json") << "{\"seed\": ";
  try {
    load_config(tmp.path / "bad.json");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("bad.json"), std::string::npos);
  }
  // name defaults to the file stem
  EXPECT_EQ(load_config(write_json(tmp.path / "stem_name.json", Json::object())).name, "stem_name");
}

TEST(BetaDocument, RoundTripsEveryLayout) {
  for (const auto& beta : {default_toy_beta(), default_csg_beta(false), default_csg_beta(true)}) {
    const Json doc = beta_to_json(beta);
    const DecisionVector back = beta_from_json(Json::parse(doc.dump()));
    EXPECT_EQ(back.layout().name(), beta.layout().name());
    EXPECT_EQ(back, beta);
  }
  EXPECT_THROW(beta_from_json(Json{{"layout", "toy"}, {"extra", 1}}), ConfigError);
  EXPECT_THROW(beta_from_json(Json{{"layout", "mesh"}}), ConfigError);
}

TEST(Run, CliWritesFiveRecordTrajectory) {
  TempDir tmp;
  const auto config = write_json(tmp.path / "toy.json", toy_config(5));
  const auto start = std::chrono::steady_clock::now();
  ASSERT_EQ(cli({"run", "--config", config.string(), "--out", (tmp.path / "run").string()}), 0);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 10.0);

  const auto lines = lines_of(slurp(tmp.path / "run" / "trajectory.jsonl"));
  ASSERT_EQ(lines.size(), 5u);
  for (std::size_t t = 0; t < lines.size(); ++t) {
    const Json j = Json::parse(lines[t]);
    std::vector<std::string> keys;
    for (const auto& [k, v] : j.items()) keys.push_back(k);
    EXPECT_EQ(keys, (std::vector<std::string>{"t", "L", "beta", "generator_calls", "sgd_steps", "wall_ms", "method"}));
    EXPECT_EQ(j["t"], t);
    EXPECT_EQ(j["method"], "hybrid");
    EXPECT_EQ(j["beta"].size(), 6u);
    // n + 2mn generator calls and n SGD steps per step
    EXPECT_EQ(j["generator_calls"], (t + 1) * (2 + 2 * 4 * 2));
    EXPECT_EQ(j["sgd_steps"], (t + 1) * 2);
  }
  const RunRecord rec = load_run_record(tmp.path / "run");
  EXPECT_EQ(rec.summary["records"], 5);
  EXPECT_EQ(rec.summary["version"], version_string());
  EXPECT_TRUE(rec.summary["final_metrics"].contains("mae"));
  EXPECT_TRUE(rec.summary["final_metrics"].contains("pct_11_25"));
}

TEST(Run, SeedOverrideChangesTrajectory) {
  TempDir tmp;
  const auto config = write_json(tmp.path / "toy.json", toy_config(3));
  ASSERT_EQ(cli({"run", "--config", config.string(), "--out", (tmp.path / "a").string()}), 0);
  ASSERT_EQ(cli({"run", "--config", config.string(), "--seed", "2", "--out", (tmp.path / "b").string()}), 0);
  const auto a = load_run_record(tmp.path / "a");
  const auto b = load_run_record(tmp.path / "b");
  EXPECT_EQ(a.config["seed"], 1);
  EXPECT_EQ(b.config["seed"], 2);
  EXPECT_NE(a.trajectory[2].loss, b.trajectory[2].loss);
}

TEST(Run, IdenticalConfigsGiveIdenticalRecords) {
  auto strip = [](const fs::path& p) {
    std::string out;
    for (const auto& line : lines_of(slurp(p))) {
      Json j = Json::parse(line);
      j.erase("wall_ms");
      out += j.dump() + "\n";
    }
    return out;
  };
  TempDir tmp;
  Json j = toy_config(4);
  j["output"] = {{"final_samples", 3}};
  const auto config = write_json(tmp.path / "toy.json", j);
  for (const char* dir : {"a", "b"})
    ASSERT_EQ(cli({"run", "--config", config.string(), "--out", (tmp.path / dir).string()}), 0);
  EXPECT_EQ(strip(tmp.path / "a" / "trajectory.jsonl"), strip(tmp.path / "b" / "trajectory.jsonl"));
  EXPECT_EQ(slurp(tmp.path / "a" / "final_samples.bin"), slurp(tmp.path / "b" / "final_samples.bin"));
  EXPECT_EQ(read_samples(tmp.path / "a" / "final_samples.bin").size(), 3u);
}

TEST(Run, OutputDirFromEnvironment) {
  TempDir tmp;
  const auto config = write_json(tmp.path / "toy.json", toy_config(2));
  ::setenv("HYBRIDGEN_OUT", (tmp.path / "envroot").string().c_str(), 1);
  const int rc = cli({"run", "--config", config.string()});
  ::unsetenv("HYBRIDGEN_OUT");
  ASSERT_EQ(rc, 0);
  EXPECT_TRUE(fs::exists(tmp.path / "envroot" / "toy-seed1" / "trajectory.jsonl"));
}

TEST(Run, EveryMethodRuns) {
  for (const char* method : {"brs", "fixed_beta"}) {
    Json j = toy_config(3);
    j["method"] = method;
    j["fixed_beta"] = {{"draws", 2}, {"dataset_size", 4}, {"snapshot_every", 2}};
    const RunResult r = run_experiment(config_from_json(j));
    ASSERT_FALSE(r.trajectory.empty()) << method;
    EXPECT_EQ(r.trajectory.front().method, method);
    EXPECT_EQ(r.counters.generator_calls, r.trajectory.back().generator_calls);
  }
}

TEST(Run, CliErrors) {
  TempDir tmp;
  EXPECT_EQ(cli({"run", "--config", (tmp.path / "missing.json").string()}), 1);
  EXPECT_EQ(cli({"run"}), 1);
  EXPECT_EQ(cli({"bogus"}), 1);
  const auto bad = write_json(tmp.path / "bad.json", Json{{"optimizer", {{"decay", 2}}}});
  EXPECT_EQ(cli({"run", "--config", bad.string(), "--out", (tmp.path / "x").string()}), 1);
  EXPECT_FALSE(fs::exists(tmp.path / "x"));
}

TEST(Record, AuditRejectsInconsistentSummary) {
  TempDir tmp;
  const auto config = config_from_json(toy_config(3));
  const RunResult r = run_experiment(config);
  write_run_record(tmp.path / "ok", config, r);
  EXPECT_NO_THROW(load_run_record(tmp.path / "ok"));

  auto tamper = [&](const char* name, auto&& edit) {
    const fs::path dir = tmp.path / name;
    write_run_record(dir, config, r);
    Json s = Json::parse(slurp(dir / "summary.json"));
    edit(s);
    std::ofstream(dir / "summary.json") << s.dump();
    EXPECT_THROW(load_run_record(dir), RecordError) << name;
  };
  tamper("final", [](Json& s) { s["final_L"] = -1.0; });
  tamper("best", [](Json& s) { s["best_t"] = 99; });
  tamper("records", [](Json& s) { s["records"] = 4; });
  tamper("counters", [](Json& s) { s["counters"]["generator_calls"] = 1; });
  tamper("method", [](Json& s) { s["method"] = "brs"; });

  // dropping a middle line breaks the consecutive steps
  const fs::path dir = tmp.path / "gap";
  write_run_record(dir, config, r);
  auto lines = lines_of(slurp(dir / "trajectory.jsonl"));
  std::ofstream(dir / "trajectory.jsonl") << lines[0] << "\n" << lines[2] << "\n";
  EXPECT_THROW(load_run_record(dir), RecordError);
  fs::remove(dir / "config.json");
  EXPECT_THROW(load_run_record(dir), RecordError);
}

TEST(Compare, CsvRoundTripsAndCountsRows) {
  TempDir tmp;
  std::vector<std::pair<std::string, RunRecord>> runs;
  std::size_t total = 0;
  for (std::uint64_t seed : {1, 2}) {
    Json j = toy_config(3 + seed);
    j["seed"] = seed;
    const auto config = config_from_json(j);
    const fs::path dir = tmp.path / ("run, \"" + std::to_string(seed) + "\"");
    write_run_record(dir, config, run_experiment(config));
    runs.emplace_back(dir.filename().string(), load_run_record(dir));
    total += 3 + seed;
  }
  const auto rows = compare_rows(runs);
  ASSERT_EQ(rows.size(), total);
  const std::string csv = emit_compare_csv(rows);
  EXPECT_EQ(lines_of(csv).front(), "method,step,generator_calls,sgd_steps,wall_ms,L,run");
  EXPECT_EQ(lines_of(csv).size(), total + 1);
  EXPECT_EQ(parse_compare_csv(csv), rows);
  EXPECT_THROW(parse_compare_csv("method,step\n"), RecordError);
  EXPECT_THROW(parse_compare_csv(lines_of(csv).front() + "\nhybrid,x,1,1,1,1,r\n"), RecordError);
}

TEST(Compare, CliWritesCsvAndTargetTable) {
  TempDir tmp;
  const auto config = write_json(tmp.path / "toy.json", toy_config(4));
  ASSERT_EQ(cli({"run", "--config", config.string(), "--out", (tmp.path / "a").string()}), 0);
  ASSERT_EQ(cli({"run", "--config", config.string(), "--seed", "3", "--out", (tmp.path / "b").string()}), 0);
  ASSERT_EQ(cli({"compare", "--runs", (tmp.path / "a").string(), (tmp.path / "b").string(), "--out",
                 (tmp.path / "cmp.csv").string()}),
            0);
  EXPECT_EQ(lines_of(slurp(tmp.path / "cmp.csv")).size(), 9u);
  EXPECT_EQ(lines_of(slurp(tmp.path / "cmp_target.csv")).size(), 3u);
  EXPECT_EQ(cli({"compare", "--runs", (tmp.path / "nothing").string(), "--out", (tmp.path / "x.csv").string()}), 1);
}

TEST(Compare, EvaluationsToTarget) {
  const std::vector<CompareRow> rows = {
      {"hybrid", 0, 10, 2, 1.0, 0.9, "h"}, {"hybrid", 1, 20, 4, 2.0, 0.4, "h"}, {"hybrid", 2, 30, 6, 3.0, 0.3, "h"},
      {"brs", 0, 10, 10, 1.0, 0.8, "b"},   {"brs", 1, 20, 20, 2.0, 0.6, "b"},   {"brs", 2, 30, 30, 3.0, 0.45, "b"},
      {"fixed_beta", 0, 5, 5, 1.0, 0.95, "f"},
  };
  const auto table = evaluations_to_target(rows, 0.5);
  ASSERT_EQ(table.size(), 3u);
  EXPECT_TRUE(table[0].reached);
  EXPECT_EQ(table[0].step, 1u);
  EXPECT_EQ(table[0].generator_calls, 20u);
  EXPECT_EQ(table[0].sgd_steps, 4u);
  EXPECT_EQ(table[0].rank, 1u);
  EXPECT_EQ(table[1].step, 2u);
  EXPECT_EQ(table[1].rank, 2u);
  EXPECT_FALSE(table[2].reached);
  EXPECT_EQ(table[2].rank, 0u);
  const auto csv = lines_of(emit_target_csv(table));
  EXPECT_EQ(csv[0], "run,method,target,reached,step,generator_calls,sgd_steps,wall_ms,rank");
  EXPECT_EQ(csv[1], "h,hybrid,0.5,true,1,20,4,2,1");
  EXPECT_EQ(csv[3], "f,fixed_beta,0.5,false,,,,,");
}

TEST(Preview, ZeroCountWritesNothing) {
  TempDir tmp;
  EXPECT_TRUE(render_preview(beta_to_json(default_toy_beta()), 0, tmp.path / "none", {}).empty());
  EXPECT_FALSE(fs::exists(tmp.path / "none"));
}

TEST(Preview, DeterministicAndReloadable) {
  TempDir tmp;
  const Json doc = beta_to_json(default_csg_beta());
  PreviewOptions opts;
  opts.size = 12;
  opts.seed = 4;
  const auto a = render_preview(doc, 3, tmp.path / "a", opts);
  const auto b = render_preview(doc, 3, tmp.path / "b", opts);
  ASSERT_EQ(a.size(), 9u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(slurp(a[i]), slurp(b[i])) << a[i];
  const Sample s = read_sample(tmp.path / "a" / "preview_001.bin");
  EXPECT_EQ(s.height(), 12u);
  EXPECT_EQ(s.truth.shape().back(), 3u);
}

TEST(Preview, CliAcceptsRunSummary) {
  TempDir tmp;
  const auto config = write_json(tmp.path / "toy.json", toy_config(2));
  ASSERT_EQ(cli({"run", "--config", config.string(), "--out", (tmp.path / "run").string()}), 0);
  ASSERT_EQ(cli({"render-preview", "--beta", (tmp.path / "run" / "summary.json").string(), "--n", "2", "--out",
                 (tmp.path / "prev").string(), "--size", "8", "--task", "depth"}),
            0);
  const Sample s = read_sample(tmp.path / "prev" / "preview_000.bin");
  EXPECT_EQ(s.truth.shape().back(), 1u);
  EXPECT_EQ(cli({"render-preview", "--beta", (tmp.path / "nope.json").string(), "--n", "1", "--out",
                 (tmp.path / "p2").string()}),
            1);
}

TEST(Metrics, ReportFromPredictionsIsFinite) {
  const auto config = config_from_json(toy_config(2));
  const Experiment e = build_experiment(config);
  const Json normal = evaluate_metrics(e.model, e.w0, e.validation->samples(), Task::Normal);
  for (const auto& [k, v] : normal.items()) EXPECT_TRUE(std::isfinite(v.get<double>())) << k;
  Json depth_cfg = toy_config(2);
  depth_cfg["pipeline"]["task"] = "depth";
  const Experiment d = build_experiment(config_from_json(depth_cfg));
  const Json depth = evaluate_metrics(d.model, d.w0, d.validation->samples(), Task::Depth);
  EXPECT_TRUE(depth.contains("rmse_log_si"));
  for (const auto& [k, v] : depth.items()) EXPECT_GE(v.get<double>(), 0.0) << k;
}
