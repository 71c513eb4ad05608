#include "hybridgen/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "hybridgen/metrics.hpp"
#include "hybridgen/rng.hpp"

#ifndef HYBRIDGEN_VERSION
#define HYBRIDGEN_VERSION "0.0.0"
#endif

namespace hg {

std::string version_string() { return std::string("hybridgen ") + HYBRIDGEN_VERSION; }

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Strict object reader: typed getters with range checks, unknown keys
// rejected by finish().
class Fields {
 public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  bool has(const std::string& key) const { return j_.contains(key); }

  const Json* raw(const std::string& key) {
    used_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::size_t count(const std::string& key, std::size_t fallback, std::size_t lo = 0,
                    std::size_t hi = std::numeric_limits<std::size_t>::max()) {
    const Json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_number_integer() || (v->is_number_integer() && v->get<long long>() < 0 && !v->is_number_unsigned()))
      throw ConfigError(join(path_, key), "expected a nonnegative integer");
    const auto x = v->get<std::uint64_t>();
    if (x < lo || x > hi)
      throw ConfigError(join(path_, key), "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "], got " +
                                              std::to_string(x));
    return static_cast<std::size_t>(x);
  }

  std::uint64_t seed(const std::string& key, std::uint64_t fallback) {
    const Json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<long long>() < 0))
      throw ConfigError(join(path_, key), "expected a nonnegative integer seed");
    return v->get<std::uint64_t>();
  }

  // lo/hi inclusive unless the matching open flag is set.
  double number(const std::string& key, double fallback, double lo, double hi, bool lo_open = false) {
    const Json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(join(path_, key), "expected a number");
    const double x = v->get<double>();
    const bool below = lo_open ? !(x > lo) : !(x >= lo);
    if (!std::isfinite(x) || below || x > hi) {
      std::ostringstream msg;
      msg << "must be in " << (lo_open ? "(" : "[") << lo << ", " << hi << "], got " << x;
      throw ConfigError(join(path_, key), msg.str());
    }
    return x;
  }

  bool flag(const std::string& key, bool fallback) {
    const Json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ConfigError(join(path_, key), "expected true or false");
    return v->get<bool>();
  }

  std::string text(const std::string& key, const std::string& fallback, const std::vector<std::string>& allowed = {}) {
    const Json* v = raw(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(join(path_, key), "expected a string");
    auto s = v->get<std::string>();
    if (!allowed.empty() && std::find(allowed.begin(), allowed.end(), s) == allowed.end()) {
      std::string list;
      for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
      throw ConfigError(join(path_, key), "unknown value '" + s + "' (expected one of " + list + ")");
    }
    return s;
  }

  Fields child(const std::string& key) {
    static const Json empty = Json::object();
    const Json* v = raw(key);
    return Fields(v ? *v : empty, join(path_, key));
  }

  void finish() const {
    for (const auto& [key, value] : j_.items())
      if (!used_.count(key)) throw ConfigError(join(path_, key), "unknown key");
  }

  const std::string& path() const { return path_; }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

std::string layout_name_for(const PipelineSpec& p) {
  if (p.kind == "toy") return "toy";
  return p.camera_block ? "csg_render" : "csg";
}

DecisionVector default_beta_for(const std::string& layout) {
  if (layout == "toy") return default_toy_beta();
  if (layout == "csg") return default_csg_beta(false);
  if (layout == "csg_render") return default_csg_beta(true);
  throw ConfigError("layout", "unknown layout '" + layout + "'");
}

const char* jacobian_name(JacobianMode m) { return m == JacobianMode::Analytic ? "analytic" : "estimated"; }

Json counters_json(const Counters& c) {
  return Json{{"generator_calls", c.generator_calls},
              {"sgd_steps", c.sgd_steps},
              {"backward_passes", c.backward_passes},
              {"validation_evals", c.validation_evals},
              {"rmsprop_updates", c.rmsprop_updates}};
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  if (quoted) throw RecordError("unterminated quote in CSV line: " + line);
  return out;
}

double parse_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || s.empty()) throw RecordError("bad number '" + s + "' in " + what);
  return v;
}

std::uint64_t parse_count(const std::string& s, const std::string& what) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw RecordError("bad count '" + s + "' in " + what);
  return std::stoull(s);
}

}  // namespace

std::shared_ptr<const Layout> layout_by_name(const std::string& name) {
  if (name == "toy") return Layout::toy();
  if (name == "csg") return Layout::csg();
  if (name == "csg_render") return Layout::csg_with_render();
  throw ConfigError("layout", "unknown layout '" + name + "' (expected toy, csg or csg_render)");
}

Json beta_to_json(const DecisionVector& beta) {
  Json blocks = Json::object();
  for (const auto& b : beta.layout().blocks()) {
    Json values = Json::array();
    for (std::size_t k = 0; k < b.size; ++k) values.push_back(beta[b.offset + k]);
    blocks[b.name] = values;
  }
  return Json{{"layout", beta.layout().name()}, {"blocks", blocks}};
}

DecisionVector apply_beta_overrides(const DecisionVector& base, const Json& blocks, const std::string& field) {
  if (!blocks.is_object()) throw ConfigError(field, "expected an object of named blocks");
  std::vector<double> values(base.values().begin(), base.values().end());
  const auto& bounds = base.layout().bounds();
  for (const auto& [name, v] : blocks.items()) {
    const std::string path = join(field, name);
    const Block* b = base.layout().find(name);
    if (!b) throw ConfigError(path, "unknown block for layout '" + base.layout().name() + "'");
    if (!v.is_array() || v.size() != b->size)
      throw ConfigError(path, "expected an array of " + std::to_string(b->size) + " numbers");
    for (std::size_t k = 0; k < b->size; ++k) {
      const std::string entry = path + "[" + std::to_string(k) + "]";
      if (!v[k].is_number()) throw ConfigError(entry, "expected a number");
      const double x = v[k].get<double>();
      const Bound& bd = bounds[b->offset + k];
      if (!(x >= bd.lo && x <= bd.hi)) {
        std::ostringstream msg;
        msg << "value " << x << " outside [" << bd.lo << ", " << bd.hi << "]";
        throw ConfigError(entry, msg.str());
      }
      values[b->offset + k] = x;
    }
  }
  return base.with_values(values);
}

DecisionVector beta_from_json(const Json& doc) {
  Fields f(doc, "");
  const std::string layout = f.text("layout", "", {"toy", "csg", "csg_render"});
  if (layout.empty()) throw ConfigError("layout", "missing");
  const Json* blocks = f.raw("blocks");
  f.finish();
  const DecisionVector base = default_beta_for(layout);
  return blocks ? apply_beta_overrides(base, *blocks, "blocks") : base;
}

ExperimentConfig config_from_json(const Json& j) {
  ExperimentConfig c;
  Fields root(j, "");
  c.name = root.text("name", "");
  c.method = root.text("method", c.method, {"hybrid", "brs", "fixed_beta"});
  c.seed = root.seed("seed", c.seed);
  c.output_dir = root.text("output_dir", "");

  {
    Fields p = root.child("pipeline");
    c.pipeline.kind = p.text("kind", c.pipeline.kind, {"toy", "csg"});
    c.pipeline.width = p.count("width", c.pipeline.width, 1, 1024);
    c.pipeline.height = p.count("height", c.pipeline.height, 1, 1024);
    c.pipeline.task = parse_task(p.text("task", task_name(c.pipeline.task), {"normal", "depth"}));
    c.pipeline.jitter = p.number("jitter", c.pipeline.jitter, 0.0, 1.0);
    c.pipeline.camera_block = p.flag("camera_block", c.pipeline.camera_block);
    c.pipeline.max_depth = p.count("max_depth", c.pipeline.max_depth, 1, 32);
    c.pipeline.frame_scale = p.number("frame_scale", c.pipeline.frame_scale, 0.0, 100.0, true);
    c.pipeline.max_steps = p.count("max_steps", c.pipeline.max_steps, 1, 100000);
    p.finish();
    if (c.pipeline.kind == "toy" && c.pipeline.camera_block)
      throw ConfigError("pipeline.camera_block", "only available for the csg pipeline");
  }
  const DecisionVector base = default_beta_for(layout_name_for(c.pipeline));

  if (const Json* sb = root.raw("start_beta")) {
    apply_beta_overrides(base, *sb, "start_beta");
    c.start_beta = *sb;
  }
  {
    Fields v = root.child("validation");
    c.validation_size = v.count("size", c.validation_size, 1, 100000);
    c.validation_seed = v.seed("seed", c.validation_seed);
    if (const Json* vb = v.raw("beta")) {
      apply_beta_overrides(base, *vb, "validation.beta");
      c.validation_beta = *vb;
    }
    v.finish();
  }
  {
    Fields m = root.child("model");
    c.hidden = m.count("hidden", c.hidden, 0, 100000);
    c.activation = parse_activation(m.text("activation", activation_name(c.activation), {"tanh", "relu", "identity"}));
    c.init_scale = m.number("init_scale", c.init_scale, 0.0, 100.0, true);
    m.finish();
  }
  {
    Fields t = root.child("train");
    c.train.learning_rate = t.number("learning_rate", c.train.learning_rate, 0.0, 1e6);
    t.finish();
  }
  {
    Fields o = root.child("optimizer");
    c.optimizer.samples_per_step = o.count("samples_per_step", c.optimizer.samples_per_step, 1, 100000);
    c.optimizer.steps = o.count("steps", c.optimizer.steps, 1, 100000000);
    c.optimizer.rmsprop.learning_rate = o.number("learning_rate", c.optimizer.rmsprop.learning_rate, 0.0, 1e6);
    c.optimizer.rmsprop.decay = o.number("decay", c.optimizer.rmsprop.decay, 0.0, 1.0 - 1e-12);
    c.optimizer.rmsprop.epsilon = o.number("epsilon", c.optimizer.rmsprop.epsilon, 0.0, 1.0, true);
    const auto jac = o.text("jacobian", jacobian_name(c.optimizer.jacobian), {"estimated", "analytic"});
    c.optimizer.jacobian = jac == "analytic" ? JacobianMode::Analytic : JacobianMode::Estimated;
    c.optimizer.fresh_seeds = o.flag("fresh_seeds", c.optimizer.fresh_seeds);
    c.optimizer.carry_weights = o.flag("carry_weights", c.optimizer.carry_weights);
    o.finish();
    if (c.optimizer.jacobian == JacobianMode::Analytic && c.pipeline.kind != "toy")
      throw ConfigError("optimizer.jacobian", "the analytic Jacobian is only available for the toy pipeline");
  }
  {
    Fields p = root.child("probes");
    c.probes.probes = p.count("count", c.probes.probes, 1, 1000000);
    c.probes.sigma = p.number("sigma", c.probes.sigma, 0.0, 100.0, true);
    c.probes.shared_probes = p.flag("shared", c.probes.shared_probes);
    c.probes.seed = p.seed("seed", c.probes.seed);
    p.finish();
  }
  {
    Fields f = root.child("fixed_beta");
    c.fixed_beta.draws = f.count("draws", c.fixed_beta.draws, 1, 100000);
    c.fixed_beta.dataset_size = f.count("dataset_size", c.fixed_beta.dataset_size, 0, 100000000);
    c.fixed_beta.generator_budget = f.count("generator_budget", c.fixed_beta.generator_budget, 0, 1000000000);
    c.fixed_beta.epochs = f.count("epochs", c.fixed_beta.epochs, 1, 100000);
    c.fixed_beta.snapshot_every = f.count("snapshot_every", c.fixed_beta.snapshot_every, 1, 100000000);
    c.fixed_beta.spread = f.number("spread", c.fixed_beta.spread, 0.0, 10.0);
    f.finish();
    if (c.method == "fixed_beta") {
      if (c.fixed_beta.dataset_size == 0 && c.fixed_beta.generator_budget == 0)
        throw ConfigError("fixed_beta.dataset_size", "set dataset_size or generator_budget");
      if (c.fixed_beta.dataset_size != 0 && c.fixed_beta.generator_budget != 0)
        throw ConfigError("fixed_beta.generator_budget", "set only one of dataset_size and generator_budget");
      if (c.fixed_beta.dataset_size == 0 && c.fixed_beta.generator_budget < c.fixed_beta.draws)
        throw ConfigError("fixed_beta.generator_budget", "must be at least the number of draws");
    }
  }
  {
    Fields o = root.child("output");
    c.final_samples = o.count("final_samples", c.final_samples, 0, 100000);
    o.finish();
  }
  root.finish();
  return c;
}

Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["name"] = c.name;
  j["method"] = c.method;
  j["seed"] = c.seed;
  if (!c.output_dir.empty()) j["output_dir"] = c.output_dir;
  j["pipeline"] = {{"kind", c.pipeline.kind},           {"width", c.pipeline.width},
                   {"height", c.pipeline.height},       {"task", task_name(c.pipeline.task)},
                   {"jitter", c.pipeline.jitter},       {"camera_block", c.pipeline.camera_block},
                   {"max_depth", c.pipeline.max_depth}, {"frame_scale", c.pipeline.frame_scale},
                   {"max_steps", c.pipeline.max_steps}};
  j["start_beta"] = c.start_beta;
  j["validation"] = {{"size", c.validation_size}, {"seed", c.validation_seed}, {"beta", c.validation_beta}};
  j["model"] = {{"hidden", c.hidden}, {"activation", activation_name(c.activation)}, {"init_scale", c.init_scale}};
  j["train"] = {{"learning_rate", c.train.learning_rate}};
  j["optimizer"] = {{"samples_per_step", c.optimizer.samples_per_step},
                    {"steps", c.optimizer.steps},
                    {"learning_rate", c.optimizer.rmsprop.learning_rate},
                    {"decay", c.optimizer.rmsprop.decay},
                    {"epsilon", c.optimizer.rmsprop.epsilon},
                    {"jacobian", jacobian_name(c.optimizer.jacobian)},
                    {"fresh_seeds", c.optimizer.fresh_seeds},
                    {"carry_weights", c.optimizer.carry_weights}};
  j["probes"] = {{"count", c.probes.probes},
                 {"sigma", c.probes.sigma},
                 {"shared", c.probes.shared_probes},
                 {"seed", c.probes.seed}};
  j["fixed_beta"] = {{"draws", c.fixed_beta.draws},
                     {"dataset_size", c.fixed_beta.dataset_size},
                     {"generator_budget", c.fixed_beta.generator_budget},
                     {"epochs", c.fixed_beta.epochs},
                     {"snapshot_every", c.fixed_beta.snapshot_every},
                     {"spread", c.fixed_beta.spread}};
  j["output"] = {{"final_samples", c.final_samples}};
  return j;
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError("", "config file " + path.string() + " is not valid JSON: " + e.what());
  }
  auto c = config_from_json(j);
  if (c.name.empty()) c.name = path.stem().string();
  return c;
}

Experiment build_experiment(const ExperimentConfig& config) {
  Experiment e;
  const auto layout = layout_by_name(layout_name_for(config.pipeline));
  if (config.pipeline.kind == "toy") {
    e.pipeline = std::make_unique<ToyPipeline>(
        ToySettings{config.pipeline.width, config.pipeline.height, config.pipeline.task, config.pipeline.jitter});
  } else {
    RenderSettings rs;
    rs.width = config.pipeline.width;
    rs.height = config.pipeline.height;
    rs.task = config.pipeline.task;
    rs.max_steps = config.pipeline.max_steps;
    RenderDistribution rd;
    rd.frame_scale = config.pipeline.frame_scale;
    e.pipeline = std::make_unique<CsgPipeline>(layout, rs, GrammarSettings{config.pipeline.max_depth}, rd);
  }
  const DecisionVector base = default_beta_for(layout->name());
  e.start = apply_beta_overrides(base, config.start_beta, "start_beta");
  e.target = apply_beta_overrides(base, config.validation_beta, "validation.beta");
  e.validation = std::make_unique<ValidationSet>(
      generate_dataset(*e.pipeline, e.target, seed_range(config.validation_seed, 0, config.validation_size)),
      config.pipeline.task);
  e.model = ModelConfig::for_task(config.pipeline.height, config.pipeline.width, config.pipeline.task, config.hidden);
  e.model.activation = config.activation;
  e.model.init_scale = config.init_scale;
  e.w0 = init_model(e.model, config.seed);
  return e;
}

Json evaluate_metrics(const ModelConfig& model, const ModelParams& weights, const std::vector<Sample>& samples,
                      Task task) {
  // Pool every valid pixel of the set into one map.
  std::vector<double> pred, truth;
  const std::size_t C = truth_channels(task);
  for (const auto& s : samples) {
    const Tensor p = predict_sample(model, weights, s);
    for (std::size_t i = 0; i < s.mask.size(); ++i) {
      if (!s.mask[i]) continue;
      for (std::size_t c = 0; c < C; ++c) {
        pred.push_back(p[i * C + c]);
        truth.push_back(s.truth[i * C + c]);
      }
    }
  }
  const std::size_t n = pred.size() / C;
  if (n == 0) throw MetricError("validation set has no foreground pixels");
  const std::vector<std::uint8_t> mask(n, 1);
  if (task == Task::Normal) {
    const auto p = NormalMap::from_prediction(Tensor(Shape{1, n, 3}, pred), mask);
    const auto t = NormalMap::from_prediction(Tensor(Shape{1, n, 3}, truth), mask);
    const auto r = normal_report(p, t, {radians(11.25), radians(22.5), radians(30.0)});
    // angles in radians; the _deg copies are for reading
    return Json{{"mae", r.mae},
                {"median", r.median},
                {"mse", r.mse},
                {"mae_deg", degrees(r.mae)},
                {"median_deg", degrees(r.median)},
                {"pct_11_25", r.pct[0]},
                {"pct_22_5", r.pct[1]},
                {"pct_30", r.pct[2]}};
  }
  // Depth predictions can be nonpositive; metrics need positive values.
  for (double& v : pred) v = std::max(v, 1e-3);
  const auto r = depth_report(DepthMap(Tensor(Shape{1, n}, pred), mask), DepthMap(Tensor(Shape{1, n}, truth), mask));
  return Json{{"abs_rel", r.abs_rel}, {"sq_rel", r.sq_rel}, {"rmse", r.rmse}, {"rmse_log", r.rmse_log},
              {"rmse_log_si", r.rmse_log_si}};
}

RunResult run_experiment(const ExperimentConfig& config) {
  const auto started = std::chrono::steady_clock::now();
  Experiment e = build_experiment(config);
  RunResult out;
  out.method = config.method;
  if (config.method == "hybrid" || config.method == "brs") {
    OptimizerState state;
    if (config.method == "hybrid") {
      HybridConfig hc;
      hc.samples_per_step = config.optimizer.samples_per_step;
      hc.steps = config.optimizer.steps;
      hc.rmsprop = config.optimizer.rmsprop;
      hc.probes = config.probes;
      hc.train = config.train;
      hc.jacobian = config.optimizer.jacobian;
      hc.fresh_seeds = config.optimizer.fresh_seeds;
      hc.seed = config.seed;
      state = run_hybrid(*e.pipeline, *e.validation, e.model, hc, e.start, e.w0);
    } else {
      BrsConfig bc;
      bc.samples_per_step = config.optimizer.samples_per_step;
      bc.steps = config.optimizer.steps;
      bc.rmsprop = config.optimizer.rmsprop;
      bc.probes = config.probes;
      bc.train = config.train;
      bc.carry_weights = config.optimizer.carry_weights;
      bc.fresh_seeds = config.optimizer.fresh_seeds;
      bc.seed = config.seed;
      state = run_brs(*e.pipeline, *e.validation, e.model, bc, e.start, e.w0);
    }
    out.trajectory = std::move(state.trajectory);
    out.counters = state.counters;
    out.final_beta = state.beta;
    out.final_weights = std::move(state.weights);
  } else {
    FixedBetaConfig fc;
    fc.draws = config.fixed_beta.draws;
    fc.dataset_size = config.fixed_beta.dataset_size ? config.fixed_beta.dataset_size
                                                     : config.fixed_beta.generator_budget / config.fixed_beta.draws;
    fc.epochs = config.fixed_beta.epochs;
    fc.snapshot_every = config.fixed_beta.snapshot_every;
    fc.spread = config.fixed_beta.spread;
    fc.train = config.train;
    fc.seed = config.seed;
    auto r = fixed_beta_run(*e.pipeline, *e.validation, e.model, fc, e.start, e.w0);
    out.trajectory = std::move(r.trajectory);
    out.counters = r.counters;
    out.final_beta = r.best_beta;
    out.final_weights = std::move(r.best_weights);
  }
  out.metrics = evaluate_metrics(e.model, out.final_weights, e.validation->samples(), config.pipeline.task);
  out.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  return out;
}

Json trajectory_line(const TrajectoryRecord& rec) {
  return Json{{"t", rec.t},
              {"L", rec.loss},
              {"beta", rec.beta},
              {"generator_calls", rec.generator_calls},
              {"sgd_steps", rec.sgd_steps},
              {"wall_ms", rec.wall_ms},
              {"method", rec.method}};
}

TrajectoryRecord trajectory_from_json(const Json& j) {
  TrajectoryRecord r;
  try {
    for (const char* key : {"t", "L", "beta", "generator_calls", "sgd_steps", "wall_ms", "method"})
      if (!j.contains(key)) throw RecordError(std::string("missing field '") + key + "'");
    if (j.size() != 7) throw RecordError("unexpected fields");
    r.t = j.at("t").get<std::size_t>();
    r.loss = j.at("L").get<double>();
    r.beta = j.at("beta").get<std::vector<double>>();
    r.generator_calls = j.at("generator_calls").get<std::uint64_t>();
    r.sgd_steps = j.at("sgd_steps").get<std::uint64_t>();
    r.wall_ms = j.at("wall_ms").get<double>();
    r.method = j.at("method").get<std::string>();
  } catch (const Json::exception& e) {
    throw RecordError(std::string("bad trajectory record: ") + e.what());
  }
  return r;
}

Json make_summary(const ExperimentConfig& config, const RunResult& result) {
  if (result.trajectory.empty()) throw RecordError("empty trajectory");
  std::size_t best = 0;
  for (std::size_t i = 1; i < result.trajectory.size(); ++i)
    if (result.trajectory[i].loss < result.trajectory[best].loss) best = i;
  return Json{{"version", version_string()},
              {"name", config.name},
              {"method", result.method},
              {"pipeline", config.pipeline.kind},
              {"seed", config.seed},
              {"records", result.trajectory.size()},
              {"best_L", result.trajectory[best].loss},
              {"best_t", result.trajectory[best].t},
              {"final_L", result.trajectory.back().loss},
              {"counters", counters_json(result.counters)},
              {"final_beta", beta_to_json(result.final_beta)},
              {"final_metrics", result.metrics},
              {"wall_ms", result.wall_ms}};
}

void write_run_record(const fs::path& dir, const ExperimentConfig& config, const RunResult& result) {
  fs::create_directories(dir);
  std::string lines;
  for (const auto& rec : result.trajectory) lines += trajectory_line(rec).dump() + "\n";
  write_file(dir / "trajectory.jsonl", lines);
  write_file(dir / "summary.json", make_summary(config, result).dump(2) + "\n");
  write_file(dir / "config.json", config_to_json(config).dump(2) + "\n");
}

RunRecord load_run_record(const fs::path& dir) {
  RunRecord r;
  const auto where = [&](const char* file) { return (dir / file).string(); };
  for (const char* file : {"trajectory.jsonl", "summary.json", "config.json"})
    if (!fs::exists(dir / file)) throw RecordError("missing " + where(file));
  {
    std::istringstream in(read_file(dir / "trajectory.jsonl"));
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
      ++number;
      if (line.empty()) continue;
      try {
        r.trajectory.push_back(trajectory_from_json(Json::parse(line)));
      } catch (const std::exception& e) {
        throw RecordError(where("trajectory.jsonl") + " line " + std::to_string(number) + ": " + e.what());
      }
      if (r.trajectory.back().t != r.trajectory.size() - 1)
        throw RecordError(where("trajectory.jsonl") + " line " + std::to_string(number) + ": expected t = " +
                          std::to_string(r.trajectory.size() - 1));
    }
  }
  try {
    r.summary = Json::parse(read_file(dir / "summary.json"));
    r.config = Json::parse(read_file(dir / "config.json"));
  } catch (const Json::parse_error& e) {
    throw RecordError(dir.string() + ": " + e.what());
  }
  const auto fail = [&](const std::string& what) { throw RecordError(where("summary.json") + ": " + what); };
  if (r.trajectory.empty()) fail("trajectory is empty");
  try {
    const auto& s = r.summary;
    if (s.at("records").get<std::size_t>() != r.trajectory.size()) fail("record count disagrees with trajectory");
    double best = r.trajectory[0].loss;
    std::size_t best_t = 0;
    for (const auto& rec : r.trajectory) {
      if (rec.method != s.at("method").get<std::string>()) fail("method disagrees with trajectory");
      if (rec.loss < best) {
        best = rec.loss;
        best_t = rec.t;
      }
    }
    if (s.at("best_L").get<double>() != best || s.at("best_t").get<std::size_t>() != best_t)
      fail("best_L disagrees with trajectory");
    if (s.at("final_L").get<double>() != r.trajectory.back().loss) fail("final_L disagrees with trajectory");
    if (s.at("counters").at("generator_calls").get<std::uint64_t>() != r.trajectory.back().generator_calls ||
        s.at("counters").at("sgd_steps").get<std::uint64_t>() != r.trajectory.back().sgd_steps)
      fail("counters disagree with trajectory");
    config_from_json(r.config);
  } catch (const Json::exception& e) {
    fail(e.what());
  } catch (const ConfigError& e) {
    throw RecordError(where("config.json") + ": " + e.what());
  }
  return r;
}

std::vector<CompareRow> compare_rows(const std::vector<std::pair<std::string, RunRecord>>& runs) {
  std::vector<CompareRow> rows;
  for (const auto& [label, record] : runs)
    for (const auto& rec : record.trajectory)
      rows.push_back({rec.method, rec.t, rec.generator_calls, rec.sgd_steps, rec.wall_ms, rec.loss, label});
  return rows;
}

std::string emit_compare_csv(const std::vector<CompareRow>& rows) {
  std::string out = "method,step,generator_calls,sgd_steps,wall_ms,L,run\n";
  for (const auto& r : rows)
    out += csv_field(r.method) + "," + std::to_string(r.step) + "," + std::to_string(r.generator_calls) + "," +
           std::to_string(r.sgd_steps) + "," + format_double(r.wall_ms) + "," + format_double(r.loss) + "," +
           csv_field(r.run) + "\n";
  return out;
}

std::vector<CompareRow> parse_compare_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "method,step,generator_calls,sgd_steps,wall_ms,L,run")
    throw RecordError("compare CSV: unexpected header");
  std::vector<CompareRow> rows;
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    const std::string where = "compare CSV line " + std::to_string(number);
    if (f.size() != 7) throw RecordError(where + ": expected 7 fields");
    rows.push_back({f[0], static_cast<std::size_t>(parse_count(f[1], where)), parse_count(f[2], where),
                    parse_count(f[3], where), parse_double(f[4], where), parse_double(f[5], where), f[6]});
  }
  return rows;
}

std::vector<TargetRow> evaluations_to_target(const std::vector<CompareRow>& rows, double target) {
  std::vector<TargetRow> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const TargetRow& t) { return t.run == r.run; });
    if (it == out.end()) {
      out.push_back({r.run, r.method, target});
      it = out.end() - 1;
    }
    if (!it->reached && r.loss <= target) {
      it->reached = true;
      it->step = r.step;
      it->generator_calls = r.generator_calls;
      it->sgd_steps = r.sgd_steps;
      it->wall_ms = r.wall_ms;
    }
  }
  for (auto& t : out) {
    if (!t.reached) continue;
    t.rank = 1;
    for (const auto& other : out)
      if (other.reached && other.generator_calls < t.generator_calls) ++t.rank;
  }
  return out;
}

std::string emit_target_csv(const std::vector<TargetRow>& rows) {
  std::string out = "run,method,target,reached,step,generator_calls,sgd_steps,wall_ms,rank\n";
  for (const auto& r : rows) {
    out += csv_field(r.run) + "," + csv_field(r.method) + "," + format_double(r.target) + "," +
           (r.reached ? "true" : "false") + ",";
    if (r.reached)
      out += std::to_string(r.step) + "," + std::to_string(r.generator_calls) + "," + std::to_string(r.sgd_steps) +
             "," + format_double(r.wall_ms) + "," + std::to_string(r.rank);
    else
      out += ",,,,";
    out += "\n";
  }
  return out;
}

std::vector<fs::path> render_preview(const Json& beta_doc, std::size_t count, const fs::path& dir,
                                     const PreviewOptions& options) {
  const DecisionVector beta = beta_from_json(beta_doc);
  if (count == 0) return {};
  std::unique_ptr<Pipeline> pipeline;
  if (beta.layout().name() == "toy") {
    pipeline = std::make_unique<ToyPipeline>(ToySettings{options.size, options.size, options.task, 0.05});
  } else {
    RenderSettings rs;
    rs.width = rs.height = options.size;
    rs.task = options.task;
    pipeline = std::make_unique<CsgPipeline>(layout_by_name(beta.layout().name()), rs);
  }
  const auto samples = generate_dataset(*pipeline, beta, seed_range(hash_combine(options.seed, 'V'), 0, count));
  fs::create_directories(dir);
  std::vector<fs::path> written;
  for (std::size_t k = 0; k < samples.size(); ++k) {
    char stem[32];
    std::snprintf(stem, sizeof stem, "preview_%03zu", k);
    const fs::path bin = dir / (std::string(stem) + ".bin");
    const fs::path image = dir / (std::string(stem) + "_image.pgm");
    const fs::path truth = dir / (std::string(stem) + "_truth.ppm");
    write_sample(bin, samples[k]);
    write_pgm(image, samples[k]);
    write_normal_ppm(truth, samples[k]);
    written.insert(written.end(), {bin, image, truth});
  }
  return written;
}

}  // namespace hg
