#pragma once

// Subcommands of the experiment driver. Each command fills an options struct
// from CLI11, runs, and writes its outputs plus manifest.json into --out.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "nsdpo/nsdpo.hpp"

namespace nsdpo::cli {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// JSON config files
// ---------------------------------------------------------------------------

/// Reads a flat JSON object (or a manifest's "config" member) as option
/// values for whichever subcommand was selected on the command line.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(const CLI::App* root) : root_(root) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    throw CLI::ConfigError("writing configs goes through the run manifest");
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      throw CLI::ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (j.contains("config") && j.at("config").is_object()) j = j.at("config");
    if (!j.is_object()) throw CLI::ConfigError("config must be a JSON object");

    std::vector<std::string> parents;
    const auto active = root_->get_subcommands();
    if (!active.empty()) parents.push_back(active.front()->get_name());

    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      if (key == "config") continue;
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar_text(key, v));
      } else if (!value.is_null()) {
        item.inputs.push_back(scalar_text(key, value));
      } else {
        continue;
      }
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  static std::string scalar_text(const std::string& key, const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    if (v.is_number()) return v.dump();
    throw CLI::ConfigError("config key '" + key + "' must be a scalar or a list of scalars");
  }

  const CLI::App* root_;
};

/// Every option of a parsed subcommand with its effective value, keyed by
/// long name. Flags become booleans, numeric text becomes numbers.
inline json resolved_config(const CLI::App& app) {
  auto typed = [](const std::string& text) -> json {
    if (text == "true") return true;
    if (text == "false") return false;
    try {
      std::size_t used = 0;
      (void)std::stod(text, &used);
      if (used == text.size()) return json::parse(text);
    } catch (const std::exception&) {
    }
    return text;
  };
  json out = json::object();
  for (const CLI::Option* opt : app.get_options()) {
    const auto& names = opt->get_lnames();
    if (names.empty()) continue;
    const std::string& name = names.front();
    if (name == "help" || name == "config") continue;
    if (opt->get_type_size() == 0) {  // flag
      bool value = false;
      if (opt->count() > 0) {
        value = opt->as<bool>();
      } else if (!opt->get_default_str().empty()) {
        value = opt->get_default_str() == "true" || opt->get_default_str() == "1";
      }
      out[name] = value;
      continue;
    }
    std::vector<std::string> values;
    if (opt->count() > 0) {
      values = opt->results();
    } else if (!opt->get_default_str().empty()) {
      const auto& d = opt->get_default_str();
      if (d.size() >= 2 && d.front() == '[' && d.back() == ']') {
        values = CLI::detail::split(d.substr(1, d.size() - 2), ',');
        for (auto& v : values) v = CLI::detail::trim_copy(v);
      } else {
        values.push_back(d);
      }
    }
    if (values.empty()) continue;
    if (opt->get_items_expected_max() > 1) {
      json arr = json::array();
      for (const auto& v : values) arr.push_back(typed(v));
      out[name] = arr;
    } else {
      out[name] = typed(values.back());
    }
  }
  return out;
}

/// FNV-1a of the resolved config, so the run id is a pure function of it.
inline std::string run_id(const std::string& command, const json& config) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : config.dump()) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream s;
  s << command << '-' << std::hex << h;
  return s.str();
}

inline void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

inline void write_manifest(const fs::path& dir, const std::string& command, const json& config,
                           const json& extra = json::object()) {
  json m{{"command", command}, {"run_id", run_id(command, config)}, {"config", config}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  write_json(dir / "manifest.json", m);
}

inline fs::path prepare_out(const std::string& out) {
  fs::path dir(out);
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------
// Shared option groups
// ---------------------------------------------------------------------------

struct CommonOptions {
  std::uint64_t seed = 0;
  std::string out = "out";
  int jobs = 0;  // 0 = hardware concurrency

  int workers() const {
    if (jobs > 0) return jobs;
    return std::max(1u, std::thread::hardware_concurrency());
  }
};

inline void add_common(CLI::App* app, CommonOptions& o) {
  app->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  app->add_option("--out", o.out, "Output directory")->capture_default_str();
  app->add_option("--jobs", o.jobs, "Worker threads (0 = all cores)")
      ->capture_default_str()
      ->check(CLI::NonNegativeNumber);
}

struct EnvOptions {
  int dx = 4;
  int actions = 16;
  int horizon = 101;
  int points_per_step = 20;
  int n_test = 100;
  double tau = 1.0;
  std::string schedule = "drift";

  EnvironmentSpec env() const {
    EnvironmentSpec e{dx, actions, tau};
    e.validate();
    return e;
  }

  DriftSchedule make_schedule() const {
    if (schedule == "drift") return default_drift_schedule(dx, horizon);
    if (schedule == "stationary") return stationary_schedule(cosine_axis(dx), horizon);
    throw std::invalid_argument("unknown schedule '" + schedule + "'");
  }
};

inline void add_env(CLI::App* app, EnvOptions& o) {
  app->add_option("--dx", o.dx, "Context dimension d_x")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--actions", o.actions, "Number of actions")->capture_default_str()->check(CLI::Range(2, 1 << 20));
  app->add_option("--horizon", o.horizon, "Horizon T (train steps 1..T-1, test at T)")
      ->capture_default_str()
      ->check(CLI::Range(4, 1 << 20));
  app->add_option("--points-per-step", o.points_per_step, "Comparisons per time step")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
  app->add_option("--n-test", o.n_test, "Held-out pairs at T")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--tau", o.tau, "KL coefficient tau")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--schedule", o.schedule, "Drift schedule")
      ->capture_default_str()
      ->check(CLI::IsMember({"drift", "stationary"}));
}

struct GeneratedData {
  OfflineDataset train;
  std::vector<TestPair> test;
  DriftSchedule schedule;
};

inline GeneratedData generate(const EnvOptions& o, std::uint64_t seed) {
  const auto env = o.env();
  auto schedule = o.make_schedule();
  auto train = sample_dataset(schedule, o.points_per_step, env, seed);
  auto test = sample_test_set(schedule, o.n_test, env, seed);
  return GeneratedData{std::move(train), std::move(test), std::move(schedule)};
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

struct GenOptions {
  CommonOptions common;
  EnvOptions env;
};

inline int run_gen(const GenOptions& o, const json& config) {
  const auto dir = prepare_out(o.common.out);
  const auto data = generate(o.env, o.common.seed);
  save_dataset((dir / "train.jsonl").string(), data.train);
  {
    std::ofstream out(dir / "test.jsonl");
    write_test_set(out, data.test, data.train.env, data.schedule.horizon(), data.schedule.to_json(),
                   o.common.seed);
  }
  write_manifest(dir, "gen", config,
                 {{"row_counts", {{"train", data.train.size()}, {"test", data.test.size()}}},
                  {"outputs", {"train.jsonl", "test.jsonl"}}});
  std::cout << "wrote " << data.train.size() << " train and " << data.test.size() << " test rows to "
            << dir.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct ObjectiveOptions {
  std::string objective = "nsdpo";
  double gamma = 0.9;
  int window = 33;
  double lambda = 0.0;
  double lr = 0.1;
  int steps = 1000;
  int eval_every = 10;
  bool normalize = true;
};

enum class ObjectiveFlags { kFull, kNoAxes, kOptimizerOnly };

inline void add_objective(CLI::App* app, ObjectiveOptions& o, ObjectiveFlags which) {
  if (which == ObjectiveFlags::kFull) {
    app->add_option("--objective", o.objective, "dpo, nsdpo or swdpo")
        ->capture_default_str()
        ->check(CLI::IsMember({"dpo", "nsdpo", "swdpo"}));
    app->add_option("--gamma", o.gamma, "Discount factor (nsdpo)")->capture_default_str()->check(CLI::Range(0.0, 1.0));
    app->add_option("--window", o.window, "Window size (swdpo)")->capture_default_str()->check(CLI::PositiveNumber);
  }
  if (which != ObjectiveFlags::kOptimizerOnly) {
    app->add_option("--lambda", o.lambda, "l2 coefficient lambda")->capture_default_str()->check(CLI::NonNegativeNumber);
  }
  app->add_option("--lr", o.lr, "Learning rate")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--steps", o.steps, "Gradient steps")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_option("--eval-every", o.eval_every, "Checkpoint interval")->capture_default_str()->check(CLI::PositiveNumber);
  app->add_flag("--normalize,!--no-normalize", o.normalize, "Normalize gradients")->capture_default_str();
}

struct TrainOptions {
  CommonOptions common;
  EnvOptions env;
  ObjectiveOptions objective;
  std::string data;  // train.jsonl; generated from --seed when empty
  std::string test;  // test.jsonl
  bool snapshots = false;
};

inline ObjectiveConfig objective_config(const ObjectiveOptions& o, double tau) {
  ObjectiveConfig c;
  c.tau = tau;
  c.gamma = o.objective == "nsdpo" ? o.gamma : 1.0;
  c.lambda = o.lambda;
  if (o.objective == "swdpo") c.window = o.window;
  return c;
}

inline TrainConfig train_config(const ObjectiveOptions& o, std::uint64_t seed, bool snapshots) {
  TrainConfig c;
  c.learning_rate = o.lr;
  c.steps = o.steps;
  c.eval_every = o.eval_every;
  c.normalize_gradient = o.normalize;
  c.seed = seed;
  c.keep_snapshots = snapshots;
  return c;
}

/// Trains one objective on generated data for `seed` (the unit of work of train and sweep).
inline TrainResult train_generated(const EnvOptions& env, const ObjectiveOptions& obj, std::uint64_t seed,
                                   bool snapshots = false) {
  const auto data = generate(env, seed);
  const auto prepared = prepare(data.train);
  return train(parse_objective_kind(obj.objective), prepared, objective_config(obj, env.tau),
               train_config(obj, seed, snapshots), data.train.horizon, data.test);
}

inline json theta_json(const TrainResult& r) {
  return {{"theta", std::vector<double>(r.theta.data(), r.theta.data() + r.theta.size())},
          {"snapshots", r.trace.snapshots_json()}};
}

inline void write_trace(const fs::path& path, const TrainTrace& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  trace.write_csv(out);
}

inline int run_train(const TrainOptions& o, const json& config) {
  const auto dir = prepare_out(o.common.out);
  TrainResult result;
  if (o.data.empty()) {
    result = train_generated(o.env, o.objective, o.common.seed, o.snapshots);
  } else {
    const auto data = load_dataset(o.data);
    std::vector<TestPair> test;
    if (!o.test.empty()) test = load_test_set(o.test).rows;
    const auto prepared = prepare(data);
    result = train(parse_objective_kind(o.objective.objective), prepared, objective_config(o.objective, o.env.tau),
                   train_config(o.objective, o.common.seed, o.snapshots), data.horizon, test);
  }
  write_trace(dir / "trace.csv", result.trace);
  write_json(dir / "theta.json", theta_json(result));
  const auto& last = result.trace.records.back();
  json extra{{"outputs", {"trace.csv", "theta.json"}}, {"final_loss", last.loss}};
  if (!std::isnan(last.reward_accuracy)) extra["final_reward_accuracy"] = last.reward_accuracy;
  write_manifest(dir, "train", config, extra);
  std::cout << o.objective.objective << " final loss " << last.loss;
  if (!std::isnan(last.reward_accuracy)) std::cout << ", reward accuracy " << last.reward_accuracy;
  std::cout << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

struct SweepOptions {
  CommonOptions common;
  EnvOptions env;
  ObjectiveOptions objective;
  std::vector<std::string> objectives{"nsdpo"};
  std::vector<double> gammas{0.9};
  std::vector<int> windows{33};
  std::vector<std::uint64_t> seeds;  // defaults to seed .. seed + num_seeds - 1
  int num_seeds = 10;
};

struct SweepCell {
  std::string objective;
  double gamma = 1.0;
  int window = 0;
  std::uint64_t seed = 0;

  std::string config_key() const {
    std::ostringstream s;
    s << objective;
    if (objective == "nsdpo") s << "-gamma" << gamma;
    if (objective == "swdpo") s << "-w" << window;
    return s.str();
  }
  std::string id() const { return config_key() + "-seed" + std::to_string(seed); }
};

inline std::vector<SweepCell> sweep_cells(const SweepOptions& o) {
  std::vector<std::uint64_t> seeds = o.seeds;
  if (seeds.empty()) {
    for (int k = 0; k < o.num_seeds; ++k) seeds.push_back(o.common.seed + static_cast<std::uint64_t>(k));
  }
  std::vector<SweepCell> cells;
  for (const auto& objective : o.objectives) {
    std::vector<SweepCell> proto;
    if (objective == "nsdpo") {
      for (const double g : o.gammas) proto.push_back({objective, g, 0, 0});
    } else if (objective == "swdpo") {
      for (const int w : o.windows) proto.push_back({objective, 1.0, w, 0});
    } else {
      proto.push_back({objective, 1.0, 0, 0});
    }
    for (auto& p : proto) {
      for (const auto s : seeds) {
        p.seed = s;
        cells.push_back(p);
      }
    }
  }
  return cells;
}

/// Runs fn(i) for i in [0, n) on a bounded pool of worker threads.
template <class Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) fn(i);
  };
  std::vector<std::thread> pool;
  const auto count = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, workers)), n);
  for (std::size_t k = 0; k < count; ++k) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& v) {
  MeanStd out;
  if (v.empty()) return out;
  for (const double x : v) out.mean += x;
  out.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (const double x : v) ss += (x - out.mean) * (x - out.mean);
    out.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return out;
}

inline int run_sweep(const SweepOptions& o, const json& config) {
  const auto dir = prepare_out(o.common.out);
  const auto cells = sweep_cells(o);
  std::vector<std::optional<TrainTrace>> traces(cells.size());
  std::vector<std::string> errors(cells.size());

  parallel_for(cells.size(), o.common.workers(), [&](std::size_t i) {
    const auto& cell = cells[i];
    try {
      ObjectiveOptions obj = o.objective;
      obj.objective = cell.objective;
      obj.gamma = cell.gamma;
      obj.window = cell.window;
      auto result = train_generated(o.env, obj, cell.seed);
      const auto cell_dir = dir / "cells" / cell.id();
      fs::create_directories(cell_dir);
      write_trace(cell_dir / "trace.csv", result.trace);
      traces[i] = std::move(result.trace);
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  // Aggregate per configuration and step over the seeds that succeeded.
  std::map<std::string, std::vector<std::size_t>> groups;
  std::vector<std::string> order;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    const auto key = cells[i].config_key();
    if (!groups.count(key)) order.push_back(key);
    if (traces[i]) groups[key].push_back(i);
  }
  {
    std::ofstream agg(dir / "aggregate.csv");
    agg << "objective,gamma,window,step,n_seeds,loss_mean,loss_std,accuracy_mean,accuracy_std\n";
    std::ofstream fin(dir / "final.csv");
    fin << "objective,gamma,window,n_seeds,accuracy_mean,accuracy_std\n";
    for (const auto& key : order) {
      const auto& members = groups[key];
      if (members.empty()) continue;
      const auto& c = cells[members.front()];
      const auto& first = traces[members.front()]->records;
      for (std::size_t r = 0; r < first.size(); ++r) {
        std::vector<double> loss;
        std::vector<double> acc;
        for (const auto i : members) {
          loss.push_back(traces[i]->records[r].loss);
          acc.push_back(traces[i]->records[r].reward_accuracy);
        }
        const auto l = mean_std(loss);
        const auto a = mean_std(acc);
        agg << c.objective << ',' << format_double(c.gamma) << ',' << c.window << ',' << first[r].step << ','
            << members.size() << ',' << format_double(l.mean) << ',' << format_double(l.std) << ','
            << format_double(a.mean) << ',' << format_double(a.std) << '\n';
        if (r + 1 == first.size()) {
          fin << c.objective << ',' << format_double(c.gamma) << ',' << c.window << ',' << members.size() << ','
              << format_double(a.mean) << ',' << format_double(a.std) << '\n';
        }
      }
    }
  }

  json failures = json::array();
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!errors[i].empty()) failures.push_back({{"cell", cells[i].id()}, {"error", errors[i]}});
  }
  write_json(dir / "failures.json", failures);
  write_manifest(dir, "sweep", config,
                 {{"cells", cells.size()},
                  {"failed", failures.size()},
                  {"outputs", {"aggregate.csv", "final.csv", "failures.json", "cells/"}}});
  std::cout << cells.size() - failures.size() << "/" << cells.size() << " cells succeeded\n";
  if (!failures.empty()) {
    std::cerr << failures.dump() << '\n';
    return 3;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// bound-study
// ---------------------------------------------------------------------------

struct BoundStudyOptions {
  CommonOptions common;
  EnvOptions env;
  ObjectiveOptions objective;
  std::vector<int> grid{5, 20, 80};  // points per step
  int num_seeds = 20;
  double gamma = -1.0;   // < 0: from the variation budget (1 when B_T = 0)
  double lambda = -1.0;  // < 0: d / n
  double radius = -1.0;  // < 0: largest ||theta*_t||
  double delta = 0.05;
  double c1 = 1.0;
  double c2 = 0.5;
};

struct BoundRow {
  long n = 0;
  std::uint64_t seed = 0;
  double gamma = 1.0;
  double lambda = 0.0;
  double xi_learn = 0.0;
  double xi_track = 0.0;
  double bound_rhs = 0.0;
  double empirical_error = 0.0;
};

inline int run_bound_study(const BoundStudyOptions& o, const json& config) {
  const auto dir = prepare_out(o.common.out);
  const auto env = o.env.env();
  const auto schedule = o.env.make_schedule();
  const double budget = variation_budget(schedule);
  const int d = env.feature_dim();
  const int T = schedule.horizon();
  const double W = o.radius > 0.0 ? o.radius : schedule.max_norm();
  const double L = feature_norm_bound(env);
  const auto coeffs = nonlinearity_coeffs(env.tau, L, W);
  double gamma = o.gamma;
  if (gamma < 0.0) gamma = budget > 0.0 ? gamma_from_budget(budget, d, T) : 1.0;

  std::vector<std::pair<int, std::uint64_t>> jobs;
  for (const int pps : o.grid) {
    for (int k = 0; k < o.num_seeds; ++k) jobs.emplace_back(pps, o.common.seed + static_cast<std::uint64_t>(k));
  }
  std::vector<BoundRow> rows(jobs.size());
  std::vector<std::string> errors(jobs.size());

  parallel_for(jobs.size(), o.common.workers(), [&](std::size_t i) {
    const auto [pps, seed] = jobs[i];
    try {
      const auto data = sample_dataset(schedule, pps, env, seed);
      const auto prepared = prepare(data);
      const long n = static_cast<long>(data.size());
      const double lambda = o.lambda >= 0.0 ? o.lambda : static_cast<double>(d) / static_cast<double>(n);

      ObjectiveConfig oc;
      oc.tau = env.tau;
      oc.gamma = gamma;
      oc.lambda = lambda;
      oc.c_sigma = coeffs.c_sigma;
      const auto fit = train(ObjectiveKind::kNsDpo, prepared, oc, train_config(o.objective, seed, false), T);
      const auto projected = project_params(fit.theta, prepared, oc, T, W);
      const Vector theta_T = schedule.at(T);

      DecompositionConfig dc;
      dc.gamma = gamma;
      dc.tau = env.tau;
      dc.lambda = lambda;
      dc.c_sigma = coeffs.c_sigma;
      const auto xi = error_decomposition(schedule, prepared, dc);

      TheoryConfig tc;
      tc.W = W;
      tc.L = L;
      tc.tau = env.tau;
      tc.lambda = lambda;
      tc.delta = o.delta;
      tc.d = d;
      tc.T = T;
      tc.n = n;
      tc.m_lower = pps;
      tc.m_upper = pps;
      tc.B_T = budget;
      tc.r_max = env.tau * 2.0 * L * W;
      tc.C1 = o.c1;
      tc.C2 = o.c2;
      const double bound_gamma = gamma < 1.0 ? gamma : 1.0 - 1e-12;
      const auto bound = estimation_bound_rhs(tc, bound_gamma);

      rows[i] = BoundRow{n,
                         seed,
                         gamma,
                         lambda,
                         xi.xi_learn,
                         xi.xi_track,
                         bound.learning_term + bound.tracking_term,
                         estimation_error(projected.theta, theta_T, prepared, gamma, T, lambda)};
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  json failures = json::array();
  {
    std::ofstream out(dir / "bound_study.csv");
    out << "n,T,gamma,B_T,lambda,seed,xi_learn,xi_track,bound_rhs,empirical_error,ratio\n";
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (!errors[i].empty()) {
        failures.push_back({{"cell", "pps" + std::to_string(jobs[i].first) + "-seed" + std::to_string(jobs[i].second)},
                            {"error", errors[i]}});
        continue;
      }
      const auto& r = rows[i];
      out << r.n << ',' << T << ',' << format_double(r.gamma) << ',' << format_double(budget) << ','
          << format_double(r.lambda) << ',' << r.seed << ',' << format_double(r.xi_learn) << ','
          << format_double(r.xi_track) << ',' << format_double(r.bound_rhs) << ','
          << format_double(r.empirical_error) << ',' << format_double(r.empirical_error / r.bound_rhs) << '\n';
    }
  }
  write_json(dir / "failures.json", failures);
  write_manifest(dir, "bound-study", config,
                 {{"B_T", budget},
                  {"gamma", gamma},
                  {"W", W},
                  {"L", L},
                  {"c_sigma", coeffs.c_sigma},
                  {"outputs", {"bound_study.csv", "failures.json"}}});
  std::cout << rows.size() - failures.size() << "/" << rows.size() << " cells succeeded\n";
  if (!failures.empty()) {
    std::cerr << failures.dump() << '\n';
    return 3;
  }
  return 0;
}

// ---------------------------------------------------------------------------
// build-dataset
// ---------------------------------------------------------------------------

struct BuildDatasetOptions {
  CommonOptions common;
  std::string preset;
  std::string table;
  int horizon = 101;
  int t_start = 33;
  int t_end = 66;
  int t_cp = 66;
  double rho = 0.9;
  double threshold = -1.0;  // < 0: 0.2 for nsgo-gradual, 0 otherwise
  long target_rows = 0;     // 0: keep as many as possible
  double test_fraction = 0.05;
};

inline int run_build_dataset(const BuildDatasetOptions& o, const json& config) {
  const bool gradual = o.preset == "nsgo-gradual" || o.preset == "tvhh-gradual";
  const auto dir = prepare_out(o.common.out);
  auto table = load_preference_table(o.table);
  const double threshold = o.threshold >= 0.0 ? o.threshold : (o.preset == "nsgo-gradual" ? 0.2 : 0.0);
  if (threshold > 0.0) table = min_divergence_filter(table, threshold);
  const auto split = split_by_prompt(table, o.test_fraction, o.common.seed);

  std::vector<TimedPreferenceRow> train_rows;
  std::vector<TimedPreferenceRow> test_rows;
  json extra{{"recipe", o.preset}, {"T", o.horizon}, {"seed", o.common.seed}, {"threshold", threshold}};
  if (gradual) {
    auto source = split.train;
    if (o.target_rows > 0) source = subsample_rows(source, static_cast<std::size_t>(o.target_rows), o.common.seed);
    train_rows = gradual_interpolation(source, o.horizon, o.t_start, o.t_end, o.common.seed);
    test_rows = gradual_test_rows(split.test, o.horizon, o.common.seed);
    extra["t_start"] = o.t_start;
    extra["t_end"] = o.t_end;
  } else {
    ChangepointOptions cp;
    cp.horizon = o.horizon;
    cp.t_cp = o.t_cp;
    cp.rho_diff = o.rho;
    cp.seed = o.common.seed;
    if (o.target_rows > 0) cp.target_rows = static_cast<std::size_t>(o.target_rows);
    const auto result = changepoint_assignment(split.train, cp);
    train_rows = result.rows;
    test_rows = changepoint_test_rows(split.test, o.horizon);
    extra["t_cp"] = o.t_cp;
    extra["rho_diff"] = o.rho;
    extra["flip_fraction"] = result.flip_fraction();
  }
  {
    std::ofstream out(dir / "train.jsonl");
    write_timed_rows(out, train_rows);
  }
  {
    std::ofstream out(dir / "test.jsonl");
    write_timed_rows(out, test_rows);
  }
  extra["row_counts"] = {{"train", train_rows.size()}, {"test", test_rows.size()}};
  extra["outputs"] = {"train.jsonl", "test.jsonl"};
  write_manifest(dir, "build-dataset", config, extra);
  std::cout << "wrote " << train_rows.size() << " train and " << test_rows.size() << " test rows to "
            << dir.string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalOptions {
  CommonOptions common;
  std::string theta;  // theta.json written by train
  std::string test;   // test.jsonl
  std::string data;   // optional train.jsonl for the estimation error
  double gamma = 1.0;
  double lambda = 0.0;
  long regret_contexts = 2000;
  long kappa_samples = 0;  // 0: skip kappa
};

inline Vector load_theta(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  const auto j = json::parse(in);
  return detail::vector_from_json(j.is_array() ? j : j.at("theta"));
}

inline int run_eval(const EvalOptions& o, const json& config) {
  const auto dir = prepare_out(o.common.out);
  const Vector theta = load_theta(o.theta);
  const auto test = load_test_set(o.test);
  const Vector ref = Vector::Zero(theta.size());
  if (theta.size() != test.env.feature_dim()) throw std::invalid_argument("theta dimension does not match test set");
  const auto id = run_id("eval", config);

  std::vector<json> records;
  records.push_back(metric_record(id, "reward_accuracy", reward_accuracy(theta, ref, test.rows, test.env.tau)));
  std::optional<DriftSchedule> schedule;
  if (!test.schedule.is_null()) schedule = DriftSchedule::from_json(test.schedule);
  if (schedule) {
    const auto regret = expected_regret(theta, *schedule, test.env.tau, ref, test.env, o.regret_contexts, o.common.seed);
    records.push_back(metric_record(id, "expected_regret", regret.value, regret.std_error));
  }
  if (o.kappa_samples > 0) {
    const auto k = condition_number_kappa(theta, ref, test.env, o.kappa_samples, o.common.seed);
    records.push_back(metric_record(id, "kappa", k.kappa));
    records.push_back(metric_record(id, "lambda_min_ref", k.lambda_min_ref));
  }
  if (!o.data.empty()) {
    if (!schedule) throw std::invalid_argument("estimation error needs the schedule recorded in the test set");
    const auto data = load_dataset(o.data);
    const auto prepared = prepare(data);
    records.push_back(metric_record(
        id, "estimation_error",
        estimation_error(theta, schedule->at(schedule->horizon()), prepared, o.gamma, data.horizon, o.lambda)));
  }
  {
    std::ofstream out(dir / "metrics.jsonl");
    for (const auto& r : records) out << r.dump() << '\n';
  }
  write_manifest(dir, "eval", config, {{"outputs", {"metrics.jsonl"}}});
  for (const auto& r : records) std::cout << r.at("metric").get<std::string>() << " " << r.at("value") << '\n';
  return 0;
}

}  // namespace nsdpo::cli
