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

#include "consistent_counts/simharness.h"

#include <cmath>
#include <memory>
#include <random>
#include <sstream>
#include <utility>

#include "consistent_counts/downpass.h"
#include "consistent_counts/error.h"
#include "consistent_counts/io.h"
#include "consistent_counts/projection.h"
#include "parallel.h"

namespace consistent_counts {

namespace {

// Stream offsets so instances and Monte Carlo replicates never share seeds.
constexpr std::uint64_t kReplicateStream = 0x5eed'0000'0000'0001ULL;
constexpr std::uint64_t kRatioStream = 0x5eed'0000'0000'0002ULL;

const std::map<Violation, std::string_view>& ViolationNames() {
  static const auto* names = new std::map<Violation, std::string_view>{
      {Violation::kNone, "none"},
      {Violation::kOneMarginal, "one-marginal"},
      {Violation::kAllMarginals, "all-marginals"},
      {Violation::kAllTwoWay, "all-2way"},
      {Violation::kAllThreeWay, "all-3way"},
      {Violation::kDetailed, "detailed"},
      {Violation::kAllCountsOneVar, "all-counts-1var"},
  };
  return *names;
}

bool IsViolated(Violation v, MarginId m, const Schema& schema) {
  switch (v) {
    case Violation::kNone:
      return false;
    case Violation::kOneMarginal:
      return m == MarginId::Of({0});
    case Violation::kAllMarginals:
      return m.size() == 1;
    case Violation::kAllTwoWay:
      return m.size() == 2;
    case Violation::kAllThreeWay:
      return m.size() == 3;
    case Violation::kDetailed:
      return m == schema.Full();
    case Violation::kAllCountsOneVar:
      return m.Contains(0);
  }
  return false;
}

SeaBlueOptions HarnessOptions(const ScenarioConfig& config) {
  SeaBlueOptions o;
  o.down_pass.force_efficient = config.force_efficient;
  return o;
}

double SquaredDistance(const std::vector<double>& a,
                       const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// Per-method tallies for one coverage trial.
struct Tally {
  std::int64_t cells = 0;
  std::int64_t covered = 0;
  std::int64_t clipped_covered = 0;
  double raw_width = 0;
  double clipped_width = 0;

  void Add(const Interval& iv, double truth) {
    const Interval c = ClipInterval(iv);
    ++cells;
    covered += iv.Contains(truth) ? 1 : 0;
    clipped_covered += c.Contains(truth) ? 1 : 0;
    raw_width += iv.width();
    clipped_width += c.width();
  }
  void Merge(const Tally& o) {
    cells += o.cells;
    covered += o.covered;
    clipped_covered += o.clipped_covered;
    raw_width += o.raw_width;
    clipped_width += o.clipped_width;
  }
};

}  // namespace

std::string_view ViolationName(Violation v) { return ViolationNames().at(v); }

std::optional<Violation> ParseViolation(std::string_view s) {
  for (const auto& [v, name] : ViolationNames()) {
    if (name == s) return v;
  }
  return std::nullopt;
}

std::vector<Violation> AllViolations() {
  return {Violation::kOneMarginal, Violation::kAllMarginals,
          Violation::kAllTwoWay,   Violation::kAllThreeWay,
          Violation::kDetailed,    Violation::kAllCountsOneVar};
}

void ScenarioConfig::Validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::kParameter, "scenario: " + what);
  };
  if (variables < 1 || variables > kMaxVariables) fail("variables must be >= 1");
  if (levels < 2) fail("levels must be >= 2");
  if (!(zip_lambda >= 0) || !std::isfinite(zip_lambda)) {
    fail("zip_lambda must be finite and >= 0");
  }
  if (!(zip_zero_prob >= 0 && zip_zero_prob <= 1)) {
    fail("zip_zero_prob must lie in [0, 1]");
  }
  if (!(variance > 0) || !std::isfinite(variance)) fail("variance must be > 0");
  if (violation_values.empty()) fail("violation_values must not be empty");
  for (double v : violation_values) {
    if (!(v > 0) || !std::isfinite(v)) fail("violation_values must be > 0");
  }
  if (replicates < 1) fail("replicates must be >= 1");
  if (rounds < 1) fail("rounds must be >= 1");
  if (!(alpha > 0 && alpha < 1)) fail("alpha must lie in (0, 1)");
  if (jobs < 1) fail("jobs must be >= 1");
}

Schema ScenarioConfig::MakeSchema() const {
  std::vector<Variable> vars;
  for (int i = 0; i < variables; ++i) {
    vars.push_back({"V" + std::to_string(i + 1), levels});
  }
  return Schema(std::move(vars));
}

nlohmann::json ScenarioToJson(const ScenarioConfig& c) {
  return {
      {"variables", c.variables},
      {"levels", c.levels},
      {"zip_lambda", c.zip_lambda},
      {"zip_zero_prob", c.zip_zero_prob},
      {"variance", c.variance},
      {"violation", std::string(ViolationName(c.violation))},
      {"violation_values", c.violation_values},
      {"noise", std::string(NoiseDistributionName(c.noise))},
      {"replicates", c.replicates},
      {"rounds", c.rounds},
      {"alpha", c.alpha},
      {"force_efficient", c.force_efficient},
      {"seed", c.seed},
      {"jobs", c.jobs},
  };
}

ScenarioConfig ScenarioFromJson(const nlohmann::json& j) {
  if (!j.is_object()) {
    throw Error(ErrorCode::kParse, "scenario must be a JSON object");
  }
  ScenarioConfig c;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "variables") {
        c.variables = value.get<int>();
      } else if (key == "levels") {
        c.levels = value.get<int>();
      } else if (key == "zip_lambda") {
        c.zip_lambda = value.get<double>();
      } else if (key == "zip_zero_prob") {
        c.zip_zero_prob = value.get<double>();
      } else if (key == "variance") {
        c.variance = value.get<double>();
      } else if (key == "violation") {
        const auto v = ParseViolation(value.get<std::string>());
        if (!v) throw Error(ErrorCode::kParse, "unknown violation");
        c.violation = *v;
      } else if (key == "violation_values") {
        c.violation_values = value.get<std::vector<double>>();
      } else if (key == "noise") {
        const auto d = ParseNoiseDistribution(value.get<std::string>());
        if (!d) throw Error(ErrorCode::kParse, "unknown noise distribution");
        c.noise = *d;
      } else if (key == "replicates") {
        c.replicates = value.get<int>();
      } else if (key == "rounds") {
        c.rounds = value.get<int>();
      } else if (key == "alpha") {
        c.alpha = value.get<double>();
      } else if (key == "force_efficient") {
        c.force_efficient = value.get<bool>();
      } else if (key == "seed") {
        c.seed = value.get<std::uint64_t>();
      } else if (key == "jobs") {
        c.jobs = value.get<int>();
      } else {
        throw Error(ErrorCode::kParse, "unknown scenario key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("scenario: ") + e.what());
  }
  c.Validate();
  return c;
}

Instance GenerateInstance(const ScenarioConfig& config, std::uint64_t index) {
  config.Validate();
  const Schema schema = config.MakeSchema();
  std::set<MarginId> all;
  for (MarginId m : schema.Full().Subsets()) all.insert(m);
  return GenerateInstance(config, schema, all, index);
}

Instance GenerateInstance(const ScenarioConfig& config, const Schema& schema,
                          const std::set<MarginId>& observed,
                          std::uint64_t index) {
  config.Validate();
  if (observed.empty()) {
    throw Error(ErrorCode::kParameter, "no observed margins");
  }
  std::mt19937_64 rng(DeriveSeed(config.seed, index));
  Instance inst;
  inst.schema = schema;
  inst.desired = CloseDownward(observed);

  std::bernoulli_distribution zero(config.zip_zero_prob);
  std::poisson_distribution<int> poisson(config.zip_lambda);
  std::vector<double> detail(schema.CellCount(schema.Full()));
  for (double& v : detail) {
    const bool z = zero(rng);
    const int draw = poisson(rng);
    v = z ? 0.0 : static_cast<double>(draw);
  }
  const DenseTable full(schema.Full(), schema.Dims(schema.Full()),
                        std::move(detail));

  std::uniform_int_distribution<std::size_t> pick(
      0, config.violation_values.size() - 1);
  std::vector<Table> tables;
  for (MarginId m : inst.desired.margins()) {
    DenseTable truth = Marginalize(full, m);
    if (observed.contains(m)) {
      Variance variance = Variance::Scalar(config.variance);
      if (IsViolated(config.violation, m, schema)) {
        std::vector<double> per_cell(truth.size());
        for (double& v : per_cell) v = config.violation_values[pick(rng)];
        variance = Variance::PerCell(std::move(per_cell));
        inst.violated_counts += static_cast<std::int64_t>(truth.size());
      }
      std::vector<double> values = truth.values();
      for (std::size_t i = 0; i < values.size(); ++i) {
        values[i] += SampleNoise(rng, config.noise, variance.at(i));
      }
      tables.emplace_back(DenseTable(m, truth.dims(), std::move(values)),
                          std::move(variance));
    }
    inst.truth.emplace(m, std::move(truth));
  }
  inst.noisy = NoisyTableSet(schema, std::move(tables));
  return inst;
}

Schema Pl94Schema() {
  return Schema({{"P1", 2}, {"P2", 2}, {"P3", 8}, {"P4", 63}});
}

std::set<MarginId> Pl94Observed() {
  return {MarginId::Of({0}),       MarginId::Of({1}),
          MarginId::Of({2}),       MarginId::Of({3}),
          MarginId::Of({0, 1}),    MarginId::Of({0, 2}),
          MarginId::Of({1, 2}),    MarginId::Of({0, 1, 2}),
          MarginId::Of({0, 1, 2, 3})};
}

nlohmann::json ReportToJson(const ExperimentReport& r) {
  nlohmann::json j = {
      {"experiment", r.experiment},
      {"config", ScenarioToJson(r.config)},
      {"trials", r.trials},
      {"cells_per_trial", r.cells_per_trial},
      {"violated_counts", r.violated_counts},
      {"mse", r.mse},
      {"coverage", r.coverage},
      {"clipped_coverage", r.clipped_coverage},
      {"raw_width", r.raw_width},
      {"clipped_width", r.clipped_width},
      {"width_ratio", r.width_ratio},
      {"skipped", r.skipped},
  };
  if (r.sea_to_projection_mse) {
    j["sea_to_projection_mse"] = *r.sea_to_projection_mse;
  }
  return j;
}

std::string ReportToCsv(const ExperimentReport& r) {
  std::ostringstream out;
  out << "section,method,value\n";
  auto section = [&](std::string_view name,
                     const std::map<std::string, double>& values) {
    for (const auto& [method, v] : values) {
      out << name << ',' << method << ',' << FormatDouble(v) << '\n';
    }
  };
  section("mse", r.mse);
  if (r.sea_to_projection_mse) {
    out << "mse,seablue-to-projection,"
        << FormatDouble(*r.sea_to_projection_mse) << '\n';
  }
  section("coverage", r.coverage);
  section("clipped_coverage", r.clipped_coverage);
  section("raw_width", r.raw_width);
  section("clipped_width", r.clipped_width);
  section("width_ratio", r.width_ratio);
  for (const auto& [method, why] : r.skipped) {
    std::string quoted = why;
    for (char& ch : quoted) {
      if (ch == '"') ch = '\'';
    }
    out << "skipped," << method << ",\"" << quoted << "\"\n";
  }
  return out.str();
}

ExperimentReport MseExperiment(const ScenarioConfig& config,
                               const std::set<std::string>& methods,
                               const ProjectionLimits& limits) {
  config.Validate();
  for (const auto& m : methods) {
    if (m != "seablue" && m != "projection" && m != "raw") {
      throw Error(ErrorCode::kParameter, "unknown MSE method '" + m + "'");
    }
  }
  ExperimentReport report;
  report.experiment = "mse";
  report.config = config;
  report.trials = config.replicates;

  const Schema schema = config.MakeSchema();
  const DesiredSet desired = CloseDownward({schema.Full()});
  report.cells_per_trial = desired.CellCount(schema);

  std::unique_ptr<BlueProjector> projector;
  if (methods.contains("projection")) {
    try {
      limits.Check(ProjectionBytes(schema, desired, false), "projection");
      projector = std::make_unique<BlueProjector>(
          BuildConstraints(schema, desired, limits), limits);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kSizeGuard) throw;
      report.skipped.emplace("projection", e.what());
    }
  }
  const bool sea = methods.contains("seablue");
  const bool raw = methods.contains("raw");
  const SeaBlueOptions options = HarnessOptions(config);

  struct Sums {
    double sea = 0, proj = 0, raw = 0, between = 0;
    std::int64_t violated = 0;
  };
  std::vector<Sums> sums(config.replicates);
  internal::ParallelFor(config.replicates, config.jobs, [&](int r) {
    const Instance inst = GenerateInstance(config, r);
    Sums& s = sums[r];
    s.violated = inst.violated_counts;
    std::vector<double> truth;
    for (const auto& [m, t] : inst.truth) {
      truth.insert(truth.end(), t.values().begin(), t.values().end());
    }
    std::vector<double> sea_values;
    if (sea || projector) {
      const FinalEstimates est = SeaBlue(inst.noisy, desired, options);
      for (const auto& [m, t] : est.tables()) {
        sea_values.insert(sea_values.end(), t.values().begin(),
                          t.values().end());
      }
      s.sea = SquaredDistance(sea_values, truth);
    }
    if (projector) {
      const ObservationVector obs =
          Stack(projector->offsets(), projector->columns(), inst.noisy);
      const Eigen::VectorXd est =
          projector->Diagonal(obs.variances).Estimate(obs.values);
      const std::vector<double> proj(est.data(), est.data() + est.size());
      s.proj = SquaredDistance(proj, truth);
      s.between = SquaredDistance(sea_values, proj);
    }
    if (raw) {
      for (const auto& [m, t] : inst.noisy.tables()) {
        s.raw += SquaredDistance(t.values(), inst.truth.at(m).values());
      }
    }
  });

  Sums total;
  for (const Sums& s : sums) {
    total.sea += s.sea;
    total.proj += s.proj;
    total.raw += s.raw;
    total.between += s.between;
  }
  report.violated_counts = sums.front().violated;
  const double denom =
      static_cast<double>(config.replicates) * report.cells_per_trial;
  if (sea) report.mse["seablue"] = total.sea / denom;
  if (projector) {
    report.mse["projection"] = total.proj / denom;
    report.sea_to_projection_mse = total.between / denom;
  }
  // Every margin is observed, so raw error covers the same cells.
  if (raw) report.mse["raw"] = total.raw / denom;
  return report;
}

ExperimentReport RobustnessExperiment(const ScenarioConfig& config,
                                      Violation violation,
                                      const ProjectionLimits& limits) {
  ScenarioConfig c = config;
  c.violation = violation;
  ExperimentReport r =
      MseExperiment(c, {"seablue", "projection", "raw"}, limits);
  r.experiment = "robustness";
  return r;
}

ExperimentReport CoverageExperiment(const ScenarioConfig& config,
                                    const std::set<std::string>& methods) {
  config.Validate();
  for (const auto& m : methods) {
    if (m != "initial" && m != "exact" && m != "mc-t" && m != "mc-df") {
      throw Error(ErrorCode::kParameter, "unknown interval method '" + m + "'");
    }
  }
  ExperimentReport report;
  report.experiment = "coverage";
  report.config = config;
  report.trials = config.replicates;
  const Schema schema = config.MakeSchema();
  const DesiredSet desired = CloseDownward({schema.Full()});
  report.cells_per_trial = desired.CellCount(schema);

  std::set<std::string> run = methods;
  if (run.contains("exact") && config.violation != Violation::kNone) {
    report.skipped.emplace("exact",
                           "exact variances need equal within-table variances");
    run.erase("exact");
  }
  if (run.contains("mc-t") && config.noise != NoiseDistribution::kGaussian) {
    report.skipped.emplace("mc-t", "mc-t intervals assume Gaussian noise");
    run.erase("mc-t");
  }
  if (run.contains("mc-df")) {
    try {
      DistributionFreeIndex(config.rounds, config.alpha);
    } catch (const Error& e) {
      report.skipped.emplace("mc-df", e.what());
      run.erase("mc-df");
    }
  }
  const bool need_reps = run.contains("mc-t") || run.contains("mc-df");
  const SeaBlueOptions options = HarnessOptions(config);
  const Pipeline pipeline = SeaBluePipeline(desired, options);
  const double z = NormalQuantile(1 - config.alpha / 2);

  std::vector<std::map<std::string, Tally>> tallies(config.replicates);
  internal::ParallelFor(config.replicates, config.jobs, [&](int t) {
    const Instance inst = GenerateInstance(config, t);
    auto& tally = tallies[t];
    const FinalEstimates est = SeaBlue(inst.noisy, desired, options);

    if (run.contains("initial")) {
      for (const auto& [m, table] : inst.noisy.tables()) {
        const auto& truth = inst.truth.at(m);
        for (std::size_t i = 0; i < table.size(); ++i) {
          const double half = z * std::sqrt(table.variance().at(i));
          tally["initial"].Add({.estimate = table.values()[i],
                                .lower = table.values()[i] - half,
                                .upper = table.values()[i] + half},
                               truth[i]);
        }
      }
    }
    auto add_table = [&](const std::string& name, const IntervalTable& it) {
      for (const auto& [m, cells] : it.cells) {
        const auto& truth = inst.truth.at(m);
        for (std::size_t i = 0; i < cells.size(); ++i) {
          tally[name].Add(cells[i], truth[i]);
        }
      }
    };
    if (run.contains("exact")) {
      add_table("exact",
                ExactZIntervals(est, ExactVariances(inst.noisy, desired, options),
                                config.alpha));
    }
    if (need_reps) {
      const NoiseModel model = NoiseModel::FromNoisy(inst.noisy, config.noise);
      const ReplicateSet reps =
          DrawReplicates(model, pipeline, config.rounds,
                         DeriveSeed(config.seed ^ kReplicateStream, t), 1);
      if (run.contains("mc-t")) {
        add_table("mc-t", McTFromReplicates(est, reps, config.alpha));
      }
      if (run.contains("mc-df")) {
        add_table("mc-df", McDfFromReplicates(est, reps, config.alpha));
      }
    }
  });

  std::map<std::string, Tally> total;
  for (const auto& trial : tallies) {
    for (const auto& [name, t] : trial) total[name].Merge(t);
  }
  for (const auto& [name, t] : total) {
    const double n = static_cast<double>(t.cells);
    report.coverage[name] = t.covered / n;
    report.clipped_coverage[name] = t.clipped_covered / n;
    report.raw_width[name] = t.raw_width / n;
    report.clipped_width[name] = t.clipped_width / n;
  }
  return report;
}

ExperimentReport WidthRatioExperiment(const ScenarioConfig& config, int m,
                                      std::int64_t trials) {
  config.Validate();
  if (m < 2) throw Error(ErrorCode::kParameter, "need m >= 2 replicates");
  if (config.noise != NoiseDistribution::kGaussian) {
    throw Error(ErrorCode::kAssumption,
                "relative widths are defined for Gaussian noise");
  }
  ExperimentReport report;
  report.experiment = "width-ratio";
  report.config = config;

  const Instance inst = GenerateInstance(config, 0);
  const SeaBlueOptions options = HarnessOptions(config);
  const auto variances = ExactVariances(inst.noisy, inst.desired, options);
  const Pipeline pipeline = SeaBluePipeline(inst.desired, options);
  const NoiseModel model = NoiseModel::FromNoisy(inst.noisy, config.noise);
  const double z = NormalQuantile(1 - config.alpha / 2);

  std::vector<double> z_half;
  for (const auto& [margin, v] : variances) {
    for (double x : v) z_half.push_back(z * std::sqrt(x));
  }
  const std::int64_t cells = static_cast<std::int64_t>(z_half.size());
  report.cells_per_trial = cells;
  const int sets = static_cast<int>((trials + cells - 1) / cells);
  report.trials = sets;

  bool df = true;
  try {
    DistributionFreeIndex(m, config.alpha);
  } catch (const Error& e) {
    df = false;
    report.skipped.emplace("mc-df", e.what());
  }

  struct Sums {
    double t = 0, df = 0, df_t = 0;
  };
  std::vector<Sums> sums(sets);
  internal::ParallelFor(sets, config.jobs, [&](int s) {
    const ReplicateSet reps =
        DrawReplicates(model, pipeline, m,
                       DeriveSeed(config.seed ^ kRatioStream, s), 1);
    std::vector<double> column(m);
    for (std::int64_t c = 0; c < cells; ++c) {
      for (int j = 0; j < m; ++j) column[j] = reps.rows[j][c];
      const double t_half = McTHalfWidth(column, config.alpha);
      sums[s].t += t_half / z_half[c];
      if (df) {
        const double df_half = McDfHalfWidth(column, config.alpha);
        sums[s].df += df_half / z_half[c];
        sums[s].df_t += df_half / t_half;
      }
    }
  });
  Sums total;
  for (const Sums& s : sums) {
    total.t += s.t;
    total.df += s.df;
    total.df_t += s.df_t;
  }
  const double n = static_cast<double>(sets) * cells;
  report.width_ratio["mc-t/z"] = total.t / n;
  if (df) {
    report.width_ratio["mc-df/z"] = total.df / n;
    report.width_ratio["mc-df/mc-t"] = total.df_t / n;
  }
  return report;
}

}  // namespace consistent_counts
