#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "hybridgen/harness.hpp"
#include "hybridgen/parallel.hpp"

namespace hg {

namespace {

constexpr const char* kOutEnv = "HYBRIDGEN_OUT";

fs::path default_run_dir(const ExperimentConfig& config, const fs::path& config_path) {
  fs::path root = config.output_dir;
  if (root.empty()) {
    const char* env = std::getenv(kOutEnv);
    root = env && *env ? fs::path(env) : fs::path("runs");
  }
  const std::string name = config.name.empty() ? config_path.stem().string() : config.name;
  return root / (name + "-seed" + std::to_string(config.seed));
}

int do_run(const fs::path& config_path, std::optional<std::uint64_t> seed, const std::string& out) {
  if (!fs::exists(config_path)) {
    std::cerr << "error: config file not found: " << config_path.string() << "\n";
    return 1;
  }
  ExperimentConfig config = load_config(config_path);
  if (seed) config.seed = *seed;
  const fs::path dir = out.empty() ? default_run_dir(config, config_path) : fs::path(out);
  std::cerr << "run " << config.name << " (" << config.method << ", seed " << config.seed << ") -> " << dir.string()
            << "\n";
  const RunResult result = run_experiment(config);
  write_run_record(dir, config, result);
  if (config.final_samples > 0) {
    const Experiment e = build_experiment(config);
    const auto samples =
        generate_dataset(*e.pipeline, result.final_beta, seed_range(hash_combine(config.seed, 'O'), 0, config.final_samples));
    write_samples(dir / "final_samples.bin", samples);
  }
  const auto& last = result.trajectory.back();
  std::printf("%s: %zu records, final L %.6g, generator calls %llu, sgd steps %llu, %.0f ms\n", dir.string().c_str(),
              result.trajectory.size(), last.loss, static_cast<unsigned long long>(last.generator_calls),
              static_cast<unsigned long long>(last.sgd_steps), result.wall_ms);
  return 0;
}

int do_compare(const std::vector<std::string>& run_dirs, const fs::path& out, std::optional<double> target) {
  std::vector<std::pair<std::string, RunRecord>> runs;
  for (const auto& d : run_dirs) runs.emplace_back(fs::path(d).filename().string(), load_run_record(d));
  for (std::size_t i = 0; i < runs.size(); ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (runs[i].first == runs[j].first) runs[i].first = run_dirs[i];  // disambiguate same-named dirs
  const auto rows = compare_rows(runs);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  {
    std::ofstream f(out, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + out.string());
    f << emit_compare_csv(rows);
  }
  // Default target: the worst of the per-run best losses, so every run reaches it.
  double level = 0.0;
  if (target) {
    level = *target;
  } else {
    bool first = true;
    for (const auto& [label, record] : runs) {
      double best = record.trajectory.front().loss;
      for (const auto& rec : record.trajectory) best = std::min(best, rec.loss);
      level = first ? best : std::max(level, best);
      first = false;
    }
  }
  const auto table = evaluations_to_target(rows, level);
  const fs::path table_path = out.parent_path() / (out.stem().string() + "_target.csv");
  {
    std::ofstream f(table_path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + table_path.string());
    f << emit_target_csv(table);
  }
  std::printf("wrote %zu rows to %s\n", rows.size(), out.string().c_str());
  std::printf("evaluations to L <= %.6g (%s):\n", level, table_path.string().c_str());
  std::printf("  %-28s %-11s %6s %16s %12s %5s\n", "run", "method", "step", "generator_calls", "sgd_steps", "rank");
  for (const auto& r : table) {
    if (r.reached)
      std::printf("  %-28s %-11s %6zu %16llu %12llu %5zu\n", r.run.c_str(), r.method.c_str(), r.step,
                  static_cast<unsigned long long>(r.generator_calls), static_cast<unsigned long long>(r.sgd_steps),
                  r.rank);
    else
      std::printf("  %-28s %-11s %6s %16s %12s %5s\n", r.run.c_str(), r.method.c_str(), "-", "not reached", "-", "-");
  }
  return 0;
}

int do_preview(const fs::path& beta_path, std::size_t count, const fs::path& out, const PreviewOptions& options) {
  std::ifstream in(beta_path);
  if (!in) {
    std::cerr << "error: beta file not found: " << beta_path.string() << "\n";
    return 1;
  }
  Json doc;
  try {
    doc = Json::parse(in);
  } catch (const Json::parse_error& e) {
    std::cerr << "error: " << beta_path.string() << " is not valid JSON: " << e.what() << "\n";
    return 1;
  }
  // A run summary carries its final beta under "final_beta".
  if (doc.is_object() && doc.contains("final_beta")) doc = doc.at("final_beta");
  const auto files = render_preview(doc, count, out, options);
  std::printf("wrote %zu files to %s\n", files.size(), out.string().c_str());
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv) {
  CLI::App app{"Learned synthetic-data generator tuning"};
  app.set_version_flag("--version", version_string());
  app.require_subcommand(1);
  std::size_t threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = hardware concurrency)")->check(CLI::NonNegativeNumber);

  auto* run = app.add_subcommand("run", "Run one experiment from a JSON config");
  std::string config_path, run_out;
  std::optional<std::uint64_t> seed;
  run->add_option("--config", config_path, "Experiment config (JSON)")->required();
  run->add_option("--seed", seed, "Override the config seed");
  run->add_option("--out", run_out,
                  std::string("Output directory (default: <output_dir or $") + kOutEnv + " or runs>/<name>-seed<S>)");

  auto* compare = app.add_subcommand("compare", "Merge run records into one CSV");
  std::vector<std::string> run_dirs;
  std::string compare_out;
  std::optional<double> target;
  compare->add_option("--runs", run_dirs, "Run directories")->required()->expected(1, -1);
  compare->add_option("--out", compare_out, "Output CSV; the target table goes to <stem>_target.csv")->required();
  compare->add_option("--target", target, "Loss level for the evaluations-to-target table");

  auto* preview = app.add_subcommand("render-preview", "Render samples from a beta document");
  std::string beta_path, preview_out, task = "normal";
  std::size_t count = 0;
  PreviewOptions options;
  preview->add_option("--beta", beta_path, "Beta document or run summary (JSON)")->required();
  preview->add_option("--n", count, "Number of samples")->required()->check(CLI::NonNegativeNumber);
  preview->add_option("--out", preview_out, "Output directory")->required();
  preview->add_option("--size", options.size, "Image side in pixels")->check(CLI::Range(1, 4096));
  preview->add_option("--seed", options.seed, "Sample seed stream");
  preview->add_option("--task", task, "normal or depth")->check(CLI::IsMember({"normal", "depth"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    set_max_threads(threads);
    if (*run) return do_run(config_path, seed, run_out);
    if (*compare) return do_compare(run_dirs, compare_out, target);
    options.task = parse_task(task);
    return do_preview(beta_path, count, preview_out, options);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace hg
