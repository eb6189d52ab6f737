#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssop/baselines.hpp"
#include "ssop/fom.hpp"
#include "ssop/offline.hpp"
#include "ssop/online.hpp"

namespace ssop::bench {

namespace fs = std::filesystem;

struct ExperimentConfig {
  std::string experiment_id = "reference";
  // system
  int n_x = 220;
  double x_max = 40.0;
  GlParams gl;
  ForcingSpec forcing;
  // data generation
  int n_train = 3000;
  int burn_in = 500;
  double dt = 0.8;
  int n_omega = 256;
  double overlap = 0.75;
  std::uint64_t seed = 1;
  // rom
  double r = 5.0;
  int p1 = 0;  // 0 selects 6 r
  int p2 = 0;
  ClosureKind closure = ClosureKind::Deim;
  double epsilon = 0.0;
  HMode h_mode = HMode::Galerkin;
  PodClosure pod_closure = PodClosure::Direct;
  // test
  int n_test = 30;
  int ic_spacing = 200;  // steps between initial conditions drawn from one long run
  std::vector<double> r_list;  // empty: {r}
  std::vector<std::string> forcings{"periodic", "pulse", "quasiperiodic", "series"};
  std::vector<double> mu0_list;
  double transfer_mu0 = 0.229;
  std::vector<double> epsilon_list;  // triadic scaling study
  SolverKind solver = SolverKind::Auto;
  double tol = 1e-10;
  int timing_repeats = 5;
  int threads = 1;
  std::string output_dir = "out";

  int p1_for(double r_avg) const;
  int p2_for(double r_avg) const;
  std::vector<double> ranks() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);
ExperimentConfig load_config(const fs::path& path);
// Small grid, short interval, 3 test trajectories.
ExperimentConfig smoke_config();

// mu0 values lo, lo + step, ... up to hi inclusive.
std::vector<double> mu_grid(double lo, double step, double hi);

// FOM pieces at one mu0.
struct Setup {
  SpaceGrid grid;
  GlParams params;
  ForcingSpec forcing;
  System sys;
};

Setup make_setup(const ExperimentConfig& config, double mu0);
Setup make_setup(const ExperimentConfig& config);

TrainingData generate_training(const Setup& setup, const ExperimentConfig& config);

struct TestSet {
  std::vector<CVec> q0;
  std::vector<CMat> forcing;  // N_f x N_omega samples
  std::vector<CMat> fom;      // N_x x N_omega states
  std::vector<double> normalizers;  // per trajectory; the ensemble mean square norm for stochastic sets
  std::vector<std::string> labels;
};

// Stochastic forcings with initial conditions from a separate long run.
TestSet generate_tests(const Setup& setup, const ExperimentConfig& config);
// Deterministic forcings from zero initial conditions, one trajectory per kind.
TestSet generate_forcing_suite(const Setup& setup, const ExperimentConfig& config);

struct Trained {
  SpodBasis basis;
  RomOperators ops;
  PodGalerkinRom pod;
  OfflineReport report;
};

Trained train(const Setup& setup, const TrainingData& data, const ExperimentConfig& config, double r_avg);

struct MethodMetrics {
  std::string method;
  std::vector<RVec> e;  // e_j per trajectory
  std::vector<double> e_timeavg;
  std::vector<int> iterations;
  std::vector<double> online_seconds;
  std::vector<std::string> solver;

  double mean() const;
  double mean_seconds() const;
};

struct MetricsRecord {
  std::string experiment_id;
  double mu0 = 0.0;
  double r = 0.0;
  std::vector<MethodMetrics> methods;

  const MethodMetrics& method(const std::string& name) const;
};

struct EvaluateOptions {
  bool ssop = true;
  bool pod_g = true;
  bool projections = true;
  std::string ssop_name = "ssop";
};

// Runs SSOP, POD-G and both projection oracles on every trajectory of the test set.
MetricsRecord evaluate(const Setup& setup, const Trained& trained, const TestSet& tests,
                       const ExperimentConfig& config, const EvaluateOptions& options = {});
MethodMetrics evaluate_ssop(const RomOperators& ops, const SpodBasis& basis, const TestSet& tests,
                            const ExperimentConfig& config, const std::string& name = "ssop");

// Output files.
void write_metrics_csv(const fs::path& path, const std::vector<MetricsRecord>& records);
void write_error_series_csv(const fs::path& path, const std::vector<MetricsRecord>& records, double dt);
nlohmann::json summarize(const std::vector<MetricsRecord>& records);
extern const char* const kMetricsHeader;

struct ExperimentResult {
  std::vector<MetricsRecord> records;
  std::optional<MetricsRecord> forcing;  // deterministic suite at config.r (first rank if absent)
  std::vector<OfflineReport> offline;
  nlohmann::json summary;
  bool ok = true;
  std::string failed_stage;
};

// Training, bases, operators and evaluation for every r plus the forcing suite;
// writes metrics.csv, errors.csv, forcing_*.csv and summary.json.
ExperimentResult run_experiment(const ExperimentConfig& config);

enum class SweepMode { PerMu, Transfer, Both };

struct SweepPoint {
  double mu0 = 0.0;
  std::optional<MetricsRecord> per_mu;
  std::optional<MethodMetrics> transfer;
  double shift = 0.0;
  std::string error;
};

std::vector<SweepPoint> run_mu_sweep(const ExperimentConfig& config, SweepMode mode);
void write_sweep_outputs(const fs::path& dir, const ExperimentConfig& config, const std::vector<SweepPoint>& points);

MetricsRecord run_forcing_suite(const Setup& setup, const Trained& trained, const ExperimentConfig& config,
                                TestSet* suite_out = nullptr);

struct TimingRow {
  double r = 0.0;
  std::string method;
  double median_seconds = 0.0;
  double constant_seconds = 0.0;
  double per_iteration_seconds = 0.0;
  int iterations = 0;
};

struct TriadicRow {
  double epsilon = 0.0;
  long long retained = 0;
  double fraction = 0.0;
  double seconds_per_evaluation = 0.0;
  double e_timeavg = 0.0;
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r2 = 0.0;
};

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

// Median-of-repeats online times for SSOP and POD-G across config.ranks().
std::vector<TimingRow> run_timing_study(const Setup& setup, const TrainingData& data, const TestSet& tests,
                                        const ExperimentConfig& config);
// Triadic closures at each epsilon: retained count, evaluation time and error.
std::vector<TriadicRow> run_triadic_study(const Setup& setup, const TrainingData& data, const TestSet& tests,
                                          const ExperimentConfig& config);

void write_timing_csv(const fs::path& path, const std::vector<TimingRow>& rows);
void write_triadic_csv(const fs::path& path, const std::vector<TriadicRow>& rows);
// Excluded energy and r_k per frequency.
void write_spectrum_csv(const fs::path& path, const SpodBasis& basis);
// (k, l, value) interaction map.
void write_impact_csv(const fs::path& path, const TriadicTable& table, const FrequencyGrid& grid);

}  // namespace ssop::bench
