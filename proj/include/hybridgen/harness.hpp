#pragma once

// Experiment plumbing: strict JSON configs, run records on disk, comparison
// CSVs and render previews.

#include <filesystem>
#include <json.hpp>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hybridgen/baselines.hpp"
#include "hybridgen/optimizer.hpp"
#include "hybridgen/pipeline.hpp"

namespace hg {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

// Invalid configuration; `field` is the dotted path of the offending key.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& field, const std::string& message)
      : std::runtime_error(field.empty() ? message : field + ": " + message), field(field) {}
  std::string field;
};

// Malformed or inconsistent run record.
class RecordError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string version_string();

struct PipelineSpec {
  std::string kind = "toy";  // toy | csg
  std::size_t width = 8;
  std::size_t height = 8;
  Task task = Task::Normal;
  double jitter = 0.05;       // toy
  bool camera_block = false;  // csg: optimize camera yaw/pitch too
  std::size_t max_depth = 6;  // csg grammar
  double frame_scale = 1.5;   // csg render
  std::size_t max_steps = 128;
};

struct OptimizerSpec {
  std::size_t samples_per_step = 4;
  std::size_t steps = 100;
  RmsPropConfig rmsprop;
  JacobianMode jacobian = JacobianMode::Estimated;
  bool fresh_seeds = true;
  bool carry_weights = true;  // brs
};

struct FixedBetaSpec {
  std::size_t draws = 10;
  std::size_t dataset_size = 0;      // per draw; 0 means generator_budget / draws
  std::size_t generator_budget = 0;  // total over all draws
  std::size_t epochs = 1;
  std::size_t snapshot_every = 8;
  double spread = 0.1;
};

struct ExperimentConfig {
  std::string name;
  std::string method = "hybrid";  // hybrid | brs | fixed_beta
  std::uint64_t seed = 0;
  std::string output_dir;
  PipelineSpec pipeline;
  Json start_beta = Json::object();       // block overrides on the default beta
  Json validation_beta = Json::object();  // block overrides defining the target set
  std::size_t validation_size = 8;
  std::uint64_t validation_seed = 12345;
  std::size_t hidden = 64;
  Activation activation = Activation::Tanh;
  double init_scale = 0.1;
  TrainConfig train;
  OptimizerSpec optimizer;
  ProbeConfig probes;
  FixedBetaSpec fixed_beta;
  std::size_t final_samples = 0;  // samples of the final beta saved with the record
};

ExperimentConfig config_from_json(const Json& j);
Json config_to_json(const ExperimentConfig& c);
ExperimentConfig load_config(const fs::path& path);

// Named-block beta documents: {"layout": name, "blocks": {block: [values]}}.
std::shared_ptr<const Layout> layout_by_name(const std::string& name);
Json beta_to_json(const DecisionVector& beta);
// Overrides blocks of `base`; `field` prefixes error paths.
DecisionVector apply_beta_overrides(const DecisionVector& base, const Json& blocks, const std::string& field);
DecisionVector beta_from_json(const Json& doc);

// Everything a run needs, built from a config.
struct Experiment {
  std::unique_ptr<Pipeline> pipeline;
  DecisionVector start;
  DecisionVector target;
  std::unique_ptr<ValidationSet> validation;
  ModelConfig model;
  ModelParams w0;
};
Experiment build_experiment(const ExperimentConfig& config);

struct RunResult {
  std::string method;
  std::vector<TrajectoryRecord> trajectory;
  Counters counters;
  DecisionVector final_beta;
  ModelParams final_weights;  // best snapshot for fixed_beta
  Json metrics;               // evaluation metrics of final_weights on the validation set
  double wall_ms = 0.0;
};
RunResult run_experiment(const ExperimentConfig& config);

// Metric report for `weights` over a validation set (radians).
Json evaluate_metrics(const ModelConfig& model, const ModelParams& weights, const std::vector<Sample>& samples,
                      Task task);

Json trajectory_line(const TrajectoryRecord& rec);
TrajectoryRecord trajectory_from_json(const Json& j);

struct RunRecord {
  std::vector<TrajectoryRecord> trajectory;
  Json summary;
  Json config;
};

Json make_summary(const ExperimentConfig& config, const RunResult& result);
void write_run_record(const fs::path& dir, const ExperimentConfig& config, const RunResult& result);
// Loads and audits: the summary must agree with the trajectory.
RunRecord load_run_record(const fs::path& dir);

struct CompareRow {
  std::string method;
  std::size_t step = 0;
  std::uint64_t generator_calls = 0;
  std::uint64_t sgd_steps = 0;
  double wall_ms = 0.0;
  double loss = 0.0;
  std::string run;
  bool operator==(const CompareRow&) const = default;
};
std::vector<CompareRow> compare_rows(const std::vector<std::pair<std::string, RunRecord>>& runs);
std::string emit_compare_csv(const std::vector<CompareRow>& rows);
std::vector<CompareRow> parse_compare_csv(const std::string& text);

struct TargetRow {
  std::string run;
  std::string method;
  double target = 0.0;
  bool reached = false;
  std::size_t step = 0;
  std::uint64_t generator_calls = 0;
  std::uint64_t sgd_steps = 0;
  double wall_ms = 0.0;
  std::size_t rank = 0;  // by generator calls at the target; 0 when never reached
};
// First record of each run with L <= target.
std::vector<TargetRow> evaluations_to_target(const std::vector<CompareRow>& rows, double target);
std::string emit_target_csv(const std::vector<TargetRow>& rows);

// Renders `count` samples of the beta document into `dir` as sample
// containers plus PGM/PPM images; returns the files written.
struct PreviewOptions {
  std::size_t size = 64;
  Task task = Task::Normal;
  std::uint64_t seed = 0;
};
std::vector<fs::path> render_preview(const Json& beta_doc, std::size_t count, const fs::path& dir,
                                     const PreviewOptions& options);

// Command-line entry point (argv as given to main).
int cli_main(int argc, const char* const* argv);

}  // namespace hg
