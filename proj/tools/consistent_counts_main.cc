//
// Copyright 2026 The Consistent Counts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
//

// consistent_counts: estimate, covariance, ci, simulate, bench.

#include <chrono>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "consistent_counts/bench.h"
#include "consistent_counts/collection.h"
#include "consistent_counts/downpass.h"
#include "consistent_counts/error.h"
#include "consistent_counts/io.h"
#include "consistent_counts/projection.h"
#include "consistent_counts/simharness.h"
#include "consistent_counts/uncertainty.h"
#include "json.hpp"

namespace cc = consistent_counts;

namespace {

int ExitCode(cc::ErrorCode code) {
  switch (code) {
    case cc::ErrorCode::kParameter:
    case cc::ErrorCode::kInvalidArgument:
      return 2;
    case cc::ErrorCode::kParse:
      return 3;
    case cc::ErrorCode::kIo:
      return 4;
    case cc::ErrorCode::kSizeGuard:
      return 5;
    case cc::ErrorCode::kAssumption:
      return 6;
    case cc::ErrorCode::kUnreachableMargin:
    case cc::ErrorCode::kIncompleteMargins:
    case cc::ErrorCode::kMarginMismatch:
    case cc::ErrorCode::kStructure:
    case cc::ErrorCode::kConflict:
    case cc::ErrorCode::kIndex:
      return 7;
    case cc::ErrorCode::kNumeric:
      return 8;
  }
  return 1;
}

std::vector<std::string> SplitList(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

// Shared input flags for the commands that read data files.
struct InputFlags {
  std::string schema;
  std::string counts;
  std::string desired = "all";
  std::optional<double> epsilon_invariant;
  bool drop_unreachable = false;

  void Register(CLI::App* app) {
    app->add_option("--schema", schema, "schema JSON file")->required();
    app->add_option("--counts", counts, "noisy counts CSV file")->required();
    app->add_option("--desired", desired,
                    "comma-separated margins such as A+B,C (closed downward), "
                    "or 'all' for every margin below an observed table");
    app->add_option("--epsilon-invariant", epsilon_invariant,
                    "variance used for zero-variance (invariant) cells");
    app->add_flag("--drop-unreachable", drop_unreachable,
                  "skip desired margins not covered by any observed table");
  }
  nlohmann::json ToJson() const {
    nlohmann::json j = {{"schema", schema},
                        {"counts", counts},
                        {"desired", desired},
                        {"drop_unreachable", drop_unreachable}};
    if (epsilon_invariant) j["epsilon_invariant"] = *epsilon_invariant;
    return j;
  }
};

struct Loaded {
  cc::NoisyTableSet noisy;
  cc::DesiredSet desired;
};

struct Run {
  cc::RunManifest manifest;

  void AddInput(const std::string& path, const std::string& bytes) {
    manifest.input_digests[path] = cc::Sha256Hex(bytes);
  }
  void Write(const std::string& path, const std::string& contents) {
    cc::WriteFile(path, contents);
    manifest.output_digests[path] = cc::Sha256Hex(contents);
  }
};

Loaded Load(const InputFlags& f, Run& run) {
  const std::string schema_text = cc::ReadFile(f.schema);
  run.AddInput(f.schema, schema_text);
  const cc::Schema schema = cc::ParseSchemaJson(schema_text);
  const std::string counts_text = cc::ReadFile(f.counts);
  run.AddInput(f.counts, counts_text);
  cc::CountsReadOptions read;
  read.epsilon_invariant = f.epsilon_invariant;
  Loaded out{cc::ParseCountsCsv(schema, counts_text, read), {}};
  if (out.noisy.tables().empty()) {
    throw cc::Error(cc::ErrorCode::kParse, "counts file holds no tables");
  }
  std::set<cc::MarginId> roots;
  if (f.desired == "all") {
    roots = out.noisy.margins();
  } else {
    for (const std::string& name : SplitList(f.desired)) {
      roots.insert(schema.ParseMargin(name == "total" ? "" : name));
    }
    if (roots.empty()) roots.insert(cc::MarginId());
  }
  out.desired = cc::CloseDownward(roots);
  return out;
}

// Desired margins covered by some observed table.
cc::DesiredSet Reachable(const cc::NoisyTableSet& noisy,
                         const cc::DesiredSet& desired) {
  std::set<cc::MarginId> keep;
  for (cc::MarginId s : desired.margins()) {
    for (const auto& [m, t] : noisy.tables()) {
      if (s.IsSubsetOf(m)) {
        keep.insert(s);
        break;
      }
    }
  }
  return cc::DesiredSet(std::move(keep));
}

cc::SeaBlueOptions PipelineOptions(const InputFlags& f) {
  cc::SeaBlueOptions o;
  o.collection.drop_unreachable = f.drop_unreachable;
  return o;
}

bool EqualVariances(const cc::NoisyTableSet& noisy) {
  try {
    cc::CheckEqualVariances(noisy);
    return true;
  } catch (const cc::Error&) {
    return false;
  }
}

// ------------------------------------------------------------------ estimate

struct EstimateFlags {
  InputFlags input;
  std::string out;
  std::string method = "seablue";
  bool no_variances = false;
};

void Estimate(const EstimateFlags& f, Run& run) {
  run.manifest.config = f.input.ToJson();
  run.manifest.config["method"] = f.method;
  run.manifest.config["variances"] = !f.no_variances;
  const Loaded in = Load(f.input, run);
  if (f.method == "seablue") {
    const cc::SeaBlueOptions options = PipelineOptions(f.input);
    const cc::FinalEstimates est = cc::SeaBlue(in.noisy, in.desired, options);
    std::optional<std::map<cc::MarginId, std::vector<double>>> var;
    if (!f.no_variances) {
      if (EqualVariances(in.noisy)) {
        var = cc::ExactVariances(in.noisy, est.desired(), options);
      } else {
        std::cerr << "note: variance column left empty; tables have unequal "
                     "within-table variances (use --method projection)\n";
      }
    }
    run.Write(f.out, cc::EstimatesToCsv(est, var ? &*var : nullptr));
    return;
  }
  const cc::DesiredSet desired =
      f.input.drop_unreachable ? Reachable(in.noisy, in.desired) : in.desired;
  const cc::ProjectionOutput out =
      cc::ProjectionEstimate(in.noisy, desired, !f.no_variances);
  run.Write(f.out, cc::EstimatesToCsv(out.estimates,
                                      f.no_variances ? nullptr : &out.variances));
}

// ---------------------------------------------------------------- covariance

struct CovarianceFlags {
  InputFlags input;
  std::string out;
  std::string method = "projection";
};

void Covariance(const CovarianceFlags& f, Run& run) {
  run.manifest.config = f.input.ToJson();
  run.manifest.config["method"] = f.method;
  const Loaded in = Load(f.input, run);
  const cc::DesiredSet desired =
      f.input.drop_unreachable ? Reachable(in.noisy, in.desired) : in.desired;
  if (f.method == "exact") {
    const auto var =
        cc::ExactVariances(in.noisy, desired, PipelineOptions(f.input));
    std::ostringstream out;
    out << "table,cell_coords,variance\n";
    for (const auto& [m, v] : var) {
      const cc::DenseTable shape = cc::DenseTable::Zeros(in.noisy.schema(), m);
      for (std::size_t i = 0; i < v.size(); ++i) {
        out << in.noisy.schema().MarginName(m) << ','
            << cc::FormatCoords(shape.Coords(i)) << ','
            << cc::FormatDouble(v[i]) << '\n';
      }
    }
    run.Write(f.out, out.str());
    return;
  }
  // Full covariance from the dense projection over the closure of desired
  // and observed margins, reported on the desired cells.
  std::set<cc::MarginId> roots = desired.margins();
  for (cc::MarginId m : in.noisy.margins()) roots.insert(m);
  const cc::DesiredSet closure = cc::CloseDownward(roots);
  const cc::ProjectionLimits limits = cc::ProjectionLimits::FromEnvironment();
  limits.Check(cc::ProjectionBytes(in.noisy.schema(), closure, true),
               "projection covariance");
  const cc::ConstraintSystem sys =
      cc::BuildConstraints(in.noisy.schema(), closure, limits);
  const cc::ObservationVector obs = cc::Stack(sys.offsets, sys.columns, in.noisy);
  const cc::BlueResult res =
      cc::BlueProjection(sys, obs.values, obs.variances, true);
  std::map<cc::MarginId, Eigen::Index> offsets;
  std::vector<Eigen::Index> keep;
  for (cc::MarginId m : desired.margins()) {
    offsets.emplace(m, static_cast<Eigen::Index>(keep.size()));
    const std::int64_t n = in.noisy.schema().CellCount(m);
    for (std::int64_t i = 0; i < n; ++i) keep.push_back(sys.offsets.at(m) + i);
  }
  const Eigen::Index k = static_cast<Eigen::Index>(keep.size());
  Eigen::MatrixXd sub(k, k);
  for (Eigen::Index r = 0; r < k; ++r) {
    for (Eigen::Index c = 0; c < k; ++c) sub(r, c) = res.covariance(keep[r], keep[c]);
  }
  run.Write(f.out, cc::CovarianceToCsv(in.noisy.schema(), offsets, sub));
}

// ------------------------------------------------------------------------ ci

struct CiFlags {
  InputFlags input;
  std::string out;
  std::string method = "exact";
  double alpha = 0.05;
  int replicates = 99;
  std::uint64_t seed = 1;
  bool clip = false;
  std::string noise = "gaussian";
};

void Ci(const CiFlags& f, int jobs, Run& run) {
  run.manifest.config = f.input.ToJson();
  run.manifest.config.update({{"method", f.method},
                              {"alpha", f.alpha},
                              {"replicates", f.replicates},
                              {"clip", f.clip},
                              {"noise", f.noise}});
  run.manifest.seed = f.seed;
  const Loaded in = Load(f.input, run);
  const auto method = cc::ParseIntervalMethod(f.method);
  const auto noise = cc::ParseNoiseDistribution(f.noise);
  if (!method) throw cc::Error(cc::ErrorCode::kParameter, "unknown method");
  if (!noise) throw cc::Error(cc::ErrorCode::kParameter, "unknown noise");
  const cc::SeaBlueOptions options = PipelineOptions(f.input);
  const cc::FinalEstimates est = cc::SeaBlue(in.noisy, in.desired, options);

  cc::IntervalTable table;
  if (*method == cc::IntervalMethod::kExactZ) {
    table = cc::ExactZIntervals(
        est, cc::ExactVariances(in.noisy, est.desired(), options), f.alpha);
  } else {
    const cc::NoiseModel model = cc::NoiseModel::FromNoisy(in.noisy, *noise);
    const cc::Pipeline pipeline = cc::SeaBluePipeline(est.desired(), options);
    table = *method == cc::IntervalMethod::kMcT
                ? cc::McTIntervals(est, model, pipeline, f.replicates, f.alpha,
                                   f.seed, jobs)
                : cc::McDfIntervals(est, model, pipeline, f.replicates,
                                    f.alpha, f.seed, jobs);
  }
  if (f.clip) table = cc::ClipIntervals(table);
  run.Write(f.out, cc::IntervalsToCsv(in.noisy.schema(), table));
}

// ------------------------------------------------------------------ simulate

struct SimulateFlags {
  std::string experiment = "mse";
  std::string scenario;
  std::optional<int> variables, levels, replicates, rounds;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> violation, noise;
  std::optional<double> alpha;
  std::string methods;
  int m = 19;
  std::int64_t trials = 20000;
  std::string shape = "kxk";
  std::string out_json, out_csv;
  std::string out_schema, out_counts, out_truth;
};

void Simulate(const SimulateFlags& f, int jobs, Run& run) {
  cc::ScenarioConfig config;
  if (!f.scenario.empty()) {
    const std::string text = cc::ReadFile(f.scenario);
    run.AddInput(f.scenario, text);
    try {
      config = cc::ScenarioFromJson(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
      throw cc::Error(cc::ErrorCode::kParse, std::string("scenario: ") + e.what());
    }
  }
  if (f.variables) config.variables = *f.variables;
  if (f.levels) config.levels = *f.levels;
  if (f.replicates) config.replicates = *f.replicates;
  if (f.rounds) config.rounds = *f.rounds;
  if (f.seed) config.seed = *f.seed;
  if (f.alpha) config.alpha = *f.alpha;
  if (f.violation) {
    const auto v = cc::ParseViolation(*f.violation);
    if (!v) throw cc::Error(cc::ErrorCode::kParameter, "unknown violation");
    config.violation = *v;
  }
  if (f.noise) {
    const auto d = cc::ParseNoiseDistribution(*f.noise);
    if (!d) throw cc::Error(cc::ErrorCode::kParameter, "unknown noise");
    config.noise = *d;
  }
  config.jobs = jobs;
  config.Validate();

  run.manifest.seed = config.seed;
  run.manifest.config = {{"experiment", f.experiment},
                         {"scenario", cc::ScenarioToJson(config)},
                         {"methods", f.methods},
                         {"m", f.m},
                         {"trials", f.trials},
                         {"shape", f.shape}};
  // Results never depend on the job count.
  run.manifest.config["scenario"].erase("jobs");

  if (f.experiment == "instance") {
    const cc::Instance inst =
        f.shape == "pl94"
            ? cc::GenerateInstance(config, cc::Pl94Schema(), cc::Pl94Observed(), 0)
            : cc::GenerateInstance(config, 0);
    if (f.out_schema.empty() || f.out_counts.empty()) {
      throw cc::Error(cc::ErrorCode::kParameter,
                      "instance needs --out-schema and --out-counts");
    }
    run.Write(f.out_schema, cc::SchemaToJson(inst.schema));
    run.Write(f.out_counts, cc::CountsToCsv(inst.noisy));
    if (!f.out_truth.empty()) {
      const cc::FinalEstimates truth(inst.schema, inst.desired, inst.truth, {});
      run.Write(f.out_truth, cc::EstimatesToCsv(truth, nullptr));
    }
    return;
  }

  std::set<std::string> methods;
  for (const auto& m : SplitList(f.methods)) methods.insert(m);
  cc::ExperimentReport report;
  if (f.experiment == "mse") {
    if (methods.empty()) methods = {"seablue", "projection", "raw"};
    report = cc::MseExperiment(config, methods);
  } else if (f.experiment == "coverage") {
    if (methods.empty()) methods = {"initial", "exact", "mc-t", "mc-df"};
    report = cc::CoverageExperiment(config, methods);
  } else if (f.experiment == "robustness") {
    report = cc::RobustnessExperiment(config, config.violation);
  } else if (f.experiment == "width-ratio") {
    report = cc::WidthRatioExperiment(config, f.m, f.trials);
  } else {
    throw cc::Error(cc::ErrorCode::kParameter,
                    "unknown experiment '" + f.experiment + "'");
  }
  report.config.jobs = 1;
  if (f.out_json.empty() && f.out_csv.empty()) {
    throw cc::Error(cc::ErrorCode::kParameter,
                    "simulate needs --out-json and/or --out-csv");
  }
  if (!f.out_json.empty()) {
    run.Write(f.out_json, cc::ReportToJson(report).dump(2) + "\n");
  }
  if (!f.out_csv.empty()) run.Write(f.out_csv, cc::ReportToCsv(report));
}

// --------------------------------------------------------------------- bench

struct BenchFlags {
  std::string sizes = "3,4,5,6";
  bool pl94 = true;
  std::string methods = "seablue,projection";
  int repeats = 1;
  std::uint64_t seed = 1;
  bool no_isolate = false;
  std::string out_csv, out_json;
};

void Bench(const BenchFlags& f, Run& run) {
  run.manifest.seed = f.seed;
  run.manifest.config = {{"sizes", f.sizes},     {"pl94", f.pl94},
                         {"methods", f.methods}, {"repeats", f.repeats},
                         {"isolate", !f.no_isolate}};
  cc::BenchOptions options;
  options.repeats = f.repeats;
  options.seed = f.seed;
  options.isolate = !f.no_isolate;
  options.methods.clear();
  for (const auto& m : SplitList(f.methods)) options.methods.insert(m);
  for (const auto& s : SplitList(f.sizes)) {
    int k = 0;
    try {
      k = std::stoi(s);
    } catch (const std::exception&) {
      throw cc::Error(cc::ErrorCode::kParameter, "bad size '" + s + "'");
    }
    if (k < 2 || k > 8) {
      throw cc::Error(cc::ErrorCode::kParameter, "sizes must lie in 2..8");
    }
    options.cases.push_back(cc::KByKCase(k));
  }
  if (f.pl94) options.cases.push_back(cc::Pl94Case());
  const auto points = cc::RunBench(options);
  if (f.out_csv.empty() && f.out_json.empty()) {
    std::cout << cc::BenchToCsv(points);
  }
  if (!f.out_csv.empty()) run.Write(f.out_csv, cc::BenchToCsv(points));
  if (!f.out_json.empty()) {
    run.Write(f.out_json, cc::BenchToJson(points).dump(2) + "\n");
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-consistent estimates from noisy marginal counts."};
  app.require_subcommand(1);
  app.fallthrough();
  int jobs = 1;
  std::string manifest_path;
  app.add_option("--jobs", jobs, "worker threads for replicate runs")
      ->check(CLI::Range(1, 256));
  app.add_option("--manifest", manifest_path,
                 "run manifest path (default: <first output>.manifest.json)");

  EstimateFlags est;
  auto* est_cmd = app.add_subcommand("estimate", "self-consistent estimates");
  est.input.Register(est_cmd);
  est_cmd->add_option("--out", est.out, "estimates CSV")->required();
  est_cmd->add_option("--method", est.method)
      ->check(CLI::IsMember({"seablue", "projection"}));
  est_cmd->add_flag("--no-variances", est.no_variances,
                    "leave the variance column empty");

  CovarianceFlags cov;
  auto* cov_cmd = app.add_subcommand("covariance", "estimate covariance");
  cov.input.Register(cov_cmd);
  cov_cmd->add_option("--out", cov.out, "covariance CSV")->required();
  cov_cmd->add_option("--method", cov.method,
                      "projection: full matrix; exact: per-cell variances")
      ->check(CLI::IsMember({"projection", "exact"}));

  CiFlags ci;
  auto* ci_cmd = app.add_subcommand("ci", "confidence intervals");
  ci.input.Register(ci_cmd);
  ci_cmd->add_option("--out", ci.out, "intervals CSV")->required();
  ci_cmd->add_option("--method", ci.method)
      ->check(CLI::IsMember({"exact", "mc-t", "mc-df"}));
  ci_cmd->add_option("--alpha", ci.alpha);
  ci_cmd->add_option("--replicates", ci.replicates,
                     "Monte Carlo replicates (19, 99 and 199 are natural)");
  ci_cmd->add_option("--seed", ci.seed);
  ci_cmd->add_flag("--clip", ci.clip, "nonnegative integer endpoints");
  ci_cmd->add_option("--noise", ci.noise, "replicate noise distribution")
      ->check(CLI::IsMember({"gaussian", "discrete-gaussian", "uniform"}));

  SimulateFlags sim;
  auto* sim_cmd = app.add_subcommand("simulate", "synthetic experiments");
  sim_cmd->add_option("--experiment", sim.experiment)
      ->check(CLI::IsMember(
          {"mse", "coverage", "robustness", "width-ratio", "instance"}));
  sim_cmd->add_option("--scenario", sim.scenario, "scenario JSON file");
  sim_cmd->add_option("--variables", sim.variables);
  sim_cmd->add_option("--levels", sim.levels);
  sim_cmd->add_option("--replicates", sim.replicates);
  sim_cmd->add_option("--rounds", sim.rounds);
  sim_cmd->add_option("--seed", sim.seed);
  sim_cmd->add_option("--alpha", sim.alpha);
  sim_cmd->add_option("--violation", sim.violation);
  sim_cmd->add_option("--noise", sim.noise);
  sim_cmd->add_option("--methods", sim.methods, "comma-separated methods");
  sim_cmd->add_option("--m", sim.m, "replicates per interval (width-ratio)");
  sim_cmd->add_option("--trials", sim.trials, "cell trials (width-ratio)");
  sim_cmd->add_option("--shape", sim.shape, "instance shape")
      ->check(CLI::IsMember({"kxk", "pl94"}));
  sim_cmd->add_option("--out-json", sim.out_json);
  sim_cmd->add_option("--out-csv", sim.out_csv);
  sim_cmd->add_option("--out-schema", sim.out_schema);
  sim_cmd->add_option("--out-counts", sim.out_counts);
  sim_cmd->add_option("--out-truth", sim.out_truth);

  BenchFlags bench;
  auto* bench_cmd = app.add_subcommand("bench", "time and memory ladder");
  bench_cmd->add_option("--sizes", bench.sizes, "k values for k-by-k cases");
  bench_cmd->add_flag("--pl94,!--no-pl94", bench.pl94, "include the PL94 shape");
  bench_cmd->add_option("--methods", bench.methods);
  bench_cmd->add_option("--repeats", bench.repeats);
  bench_cmd->add_option("--seed", bench.seed);
  bench_cmd->add_flag("--no-isolate", bench.no_isolate,
                      "measure in-process instead of in a child");
  bench_cmd->add_option("--out-csv", bench.out_csv);
  bench_cmd->add_option("--out-json", bench.out_json);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    // Help and version exit 0; every other usage error exits 2.
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  Run run;
  const auto t0 = std::chrono::steady_clock::now();
  std::string first_output;
  int code = 0;
  try {
    if (*est_cmd) {
      run.manifest.command = "estimate";
      first_output = est.out;
      Estimate(est, run);
    } else if (*cov_cmd) {
      run.manifest.command = "covariance";
      first_output = cov.out;
      Covariance(cov, run);
    } else if (*ci_cmd) {
      run.manifest.command = "ci";
      first_output = ci.out;
      Ci(ci, jobs, run);
    } else if (*sim_cmd) {
      run.manifest.command = "simulate";
      for (const std::string* p : {&sim.out_json, &sim.out_csv, &sim.out_counts}) {
        if (first_output.empty() && !p->empty()) first_output = *p;
      }
      Simulate(sim, jobs, run);
    } else if (*bench_cmd) {
      run.manifest.command = "bench";
      first_output = !bench.out_csv.empty() ? bench.out_csv : bench.out_json;
      Bench(bench, run);
    }
  } catch (const cc::Error& e) {
    code = ExitCode(e.code());
    run.manifest.status = "error";
    run.manifest.error =
        std::string(cc::ErrorCodeName(e.code())) + ": " + e.what();
    std::cerr << "error: " << run.manifest.error << "\n";
  } catch (const std::exception& e) {
    code = 1;
    run.manifest.status = "error";
    run.manifest.error = e.what();
    std::cerr << "error: " << e.what() << "\n";
  }
  run.manifest.exit_code = code;
  run.manifest.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  run.manifest.peak_rss_bytes = cc::PeakRssBytes();
  if (manifest_path.empty() && !first_output.empty()) {
    manifest_path = first_output + ".manifest.json";
  }
  if (!manifest_path.empty()) {
    try {
      cc::WriteFile(manifest_path, run.manifest.ToJson().dump(2) + "\n");
    } catch (const cc::Error& e) {
      std::cerr << "error: cannot write manifest: " << e.what() << "\n";
      if (code == 0) code = ExitCode(e.code());
    }
  }
  return code;
}
