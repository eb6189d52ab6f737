#include "ssop/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "ssop/io.hpp"
#include "ssop/spectra.hpp"
#include "ssop/store.hpp"

namespace ssop::bench {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Long runs draw n_omega extra forcing samples so the periodic wrap of the band-limited
// interpolant lies beyond the last retained step.

// Seed streams derived from the root seed.
constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kIcStream = 2;
constexpr std::uint64_t kTestForcingStream = 1000;

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::ofstream open_csv(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << std::setprecision(10);
  return out;
}

SolveOptions solve_options(const ExperimentConfig& c) {
  SolveOptions o;
  o.solver = c.solver;
  o.tol = c.tol;
  return o;
}

OfflineOptions offline_options(const ExperimentConfig& c, double r_avg) {
  OfflineOptions o;
  o.p1 = c.p1_for(r_avg);
  o.p2 = c.p2_for(r_avg);
  o.closure = c.closure;
  o.epsilon = c.epsilon;
  o.h_mode = c.h_mode;
  return o;
}

double shift_for(const GlParams& p, const CMat& a) {
  return p.stability_shift >= 0.0 ? p.stability_shift : default_stability_shift(a);
}

MethodMetrics empty_metrics(const std::string& name, std::size_t n) {
  MethodMetrics m;
  m.method = name;
  m.e.resize(n);
  m.e_timeavg.assign(n, 0.0);
  m.iterations.assign(n, 0);
  m.online_seconds.assign(n, 0.0);
  m.solver.assign(n, "");
  return m;
}

void record(MethodMetrics& m, std::size_t i, const CMat& fom, const CMat& approx, const RVec& w, double normalizer) {
  m.e[i] = error_series(fom, approx, w, normalizer);
  m.e_timeavg[i] = m.e[i].mean();
}

void record_failure(MethodMetrics& m, std::size_t i, int n_steps) {
  m.e[i] = RVec::Constant(n_steps, std::numeric_limits<double>::infinity());
  m.e_timeavg[i] = std::numeric_limits<double>::infinity();
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------- config

int ExperimentConfig::p1_for(double r_avg) const {
  return p1 > 0 ? p1 : static_cast<int>(std::lround(6.0 * r_avg));
}

int ExperimentConfig::p2_for(double r_avg) const {
  return p2 > 0 ? p2 : static_cast<int>(std::lround(6.0 * r_avg));
}

std::vector<double> ExperimentConfig::ranks() const { return r_list.empty() ? std::vector<double>{r} : r_list; }

void to_json(json& j, const ExperimentConfig& c) {
  j = json{{"experiment_id", c.experiment_id},
           {"system", {{"n_x", c.n_x}, {"x_max", c.x_max}, {"gl", c.gl}, {"forcing", c.forcing}}},
           {"data",
            {{"n_train", c.n_train},
             {"burn_in", c.burn_in},
             {"dt", c.dt},
             {"n_omega", c.n_omega},
             {"overlap", c.overlap},
             {"seed", c.seed}}},
           {"rom",
            {{"r", c.r},
             {"p1", c.p1},
             {"p2", c.p2},
             {"closure", to_string(c.closure)},
             {"epsilon", c.epsilon},
             {"h_mode", to_string(c.h_mode)},
             {"pod_closure", to_string(c.pod_closure)}}},
           {"test",
            {{"n_test", c.n_test},
             {"ic_spacing", c.ic_spacing},
             {"r_list", c.r_list},
             {"forcings", c.forcings},
             {"mu0_list", c.mu0_list},
             {"transfer_mu0", c.transfer_mu0},
             {"epsilon_list", c.epsilon_list},
             {"solver", to_string(c.solver)},
             {"tol", c.tol},
             {"timing_repeats", c.timing_repeats},
             {"threads", c.threads}}},
           {"output_dir", c.output_dir}};
}

void from_json(const json& j, ExperimentConfig& c) {
  io::reject_unknown(j, {"experiment_id", "system", "data", "rom", "test", "output_dir"}, "config");
  c = ExperimentConfig{};
  c.experiment_id = j.value("experiment_id", c.experiment_id);
  c.output_dir = j.value("output_dir", c.output_dir);
  if (j.contains("system")) {
    const auto& s = j["system"];
    io::reject_unknown(s, {"n_x", "x_max", "gl", "forcing"}, "system");
    c.n_x = s.value("n_x", c.n_x);
    c.x_max = s.value("x_max", c.x_max);
    if (s.contains("gl")) c.gl = s["gl"].get<GlParams>();
    if (s.contains("forcing")) c.forcing = s["forcing"].get<ForcingSpec>();
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    io::reject_unknown(d, {"n_train", "burn_in", "dt", "n_omega", "overlap", "seed"}, "data");
    c.n_train = d.value("n_train", c.n_train);
    c.burn_in = d.value("burn_in", c.burn_in);
    c.dt = d.value("dt", c.dt);
    c.n_omega = d.value("n_omega", c.n_omega);
    c.overlap = d.value("overlap", c.overlap);
    c.seed = d.value("seed", c.seed);
  }
  if (j.contains("rom")) {
    const auto& r = j["rom"];
    io::reject_unknown(r, {"r", "p1", "p2", "closure", "epsilon", "h_mode", "pod_closure"}, "rom");
    c.r = r.value("r", c.r);
    c.p1 = r.value("p1", c.p1);
    c.p2 = r.value("p2", c.p2);
    if (r.contains("closure")) c.closure = closure_from_string(r["closure"].get<std::string>());
    c.epsilon = r.value("epsilon", c.epsilon);
    if (r.contains("h_mode")) c.h_mode = h_mode_from_string(r["h_mode"].get<std::string>());
    if (r.contains("pod_closure")) c.pod_closure = pod_closure_from_string(r["pod_closure"].get<std::string>());
  }
  if (j.contains("test")) {
    const auto& t = j["test"];
    io::reject_unknown(t,
                       {"n_test", "ic_spacing", "r_list", "forcings", "mu0_list", "transfer_mu0", "epsilon_list",
                        "solver", "tol", "timing_repeats", "threads"},
                       "test");
    c.n_test = t.value("n_test", c.n_test);
    c.ic_spacing = t.value("ic_spacing", c.ic_spacing);
    c.r_list = t.value("r_list", c.r_list);
    c.forcings = t.value("forcings", c.forcings);
    c.mu0_list = t.value("mu0_list", c.mu0_list);
    c.transfer_mu0 = t.value("transfer_mu0", c.transfer_mu0);
    c.epsilon_list = t.value("epsilon_list", c.epsilon_list);
    if (t.contains("solver")) c.solver = solver_from_string(t["solver"].get<std::string>());
    c.tol = t.value("tol", c.tol);
    c.timing_repeats = t.value("timing_repeats", c.timing_repeats);
    c.threads = t.value("threads", c.threads);
  }
  for (const auto& f : c.forcings) {
    if (forcing_kind_from_string(f) == ForcingKind::StochasticGaussian || f == "custom") {
      throw InvalidArgument("forcing suite takes deterministic kinds only, got '" + f + "'");
    }
  }
  if (c.n_x < 4 || c.n_omega < 4 || c.n_test < 1 || c.r <= 0 || c.dt <= 0 || c.timing_repeats < 1) {
    throw InvalidArgument("config has a non-positive size");
  }
  if (c.n_train < c.n_omega) throw InvalidArgument("n_train must be at least n_omega");
}

ExperimentConfig load_config(const fs::path& path) { return io::read_json(path).get<ExperimentConfig>(); }

ExperimentConfig smoke_config() {
  ExperimentConfig c;
  c.experiment_id = "smoke";
  c.n_x = 64;
  c.x_max = 25.0;
  c.n_omega = 64;
  c.n_train = 800;
  c.burn_in = 200;
  c.n_test = 3;
  c.ic_spacing = 100;
  c.r = 3;
  c.p1 = 12;
  c.p2 = 12;
  c.output_dir = "out/smoke";
  return c;
}

std::vector<double> mu_grid(double lo, double step, double hi) {
  if (!(step > 0)) throw InvalidArgument("mu grid step must be positive");
  std::vector<double> out;
  const auto n = static_cast<int>(std::floor((hi - lo) / step + 1e-9));
  for (int i = 0; i <= n; ++i) out.push_back(lo + i * step);
  return out;
}

// ---------------------------------------------------------------- data

Setup make_setup(const ExperimentConfig& config, double mu0) {
  Setup s;
  s.grid = build_hermite_grid(config.n_x, config.x_max);
  s.params = config.gl;
  s.params.mu0 = mu0;
  s.forcing = config.forcing;
  s.sys.op = build_gl_operator(s.grid, s.params);
  s.sys.mu = {mu0};
  s.sys.b = forcing_input_map(s.grid, s.forcing);
  s.sys.weights = s.grid.weights;
  s.sys.nonlinearity = gl_nonlinearity(s.grid, s.params);
  s.sys.shift = shift_for(s.params, s.sys.unshifted_operator());
  return s;
}

Setup make_setup(const ExperimentConfig& config) { return make_setup(config, config.gl.mu0); }

TrainingData generate_training(const Setup& setup, const ExperimentConfig& config) {
  const int n = config.burn_in + config.n_train;
  const StochasticForcing sampler(setup.grid, setup.forcing);
  const CMat f = sampler.sample(n + config.n_omega, config.dt, derive_seed(config.seed, kTrainStream));
  const CMat q = integrate(setup.sys, CVec::Zero(setup.grid.size()), f, n, config.dt);
  TrainingData data;
  data.snapshots = q.rightCols(config.n_train);
  data.stack = welch_blocks(data.snapshots, FrequencyGrid{config.n_omega, config.dt}, config.overlap);
  return data;
}

TestSet generate_tests(const Setup& setup, const ExperimentConfig& config) {
  const int n_ic = config.burn_in + config.n_test * config.ic_spacing;
  const StochasticForcing sampler(setup.grid, setup.forcing);
  const CMat f_ic = sampler.sample(n_ic + config.n_omega, config.dt, derive_seed(config.seed, kIcStream));
  const CMat ic_run = integrate(setup.sys, CVec::Zero(setup.grid.size()), f_ic, n_ic, config.dt);
  TestSet t;
  const auto n = static_cast<std::size_t>(config.n_test);
  t.q0.resize(n);
  t.forcing.resize(n);
  t.fom.resize(n);
  t.labels.resize(n);
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, config.threads))
  for (int i = 0; i < config.n_test; ++i) {
    const auto ii = static_cast<std::size_t>(i);
    t.q0[ii] = ic_run.col(config.burn_in + i * config.ic_spacing);
    t.forcing[ii] = sampler.sample(config.n_omega, config.dt, derive_seed(config.seed, kTestForcingStream + ii));
    t.fom[ii] = integrate(setup.sys, t.q0[ii], t.forcing[ii], config.n_omega, config.dt);
    t.labels[ii] = "stochastic-" + std::to_string(i);
  }
  t.normalizers.assign(n, mean_square_norm(t.fom, setup.grid.weights));
  return t;
}

TestSet generate_forcing_suite(const Setup& setup, const ExperimentConfig& config) {
  TestSet t;
  for (const auto& name : config.forcings) {
    ForcingSpec spec = setup.forcing;
    spec.kind = forcing_kind_from_string(name);
    const CMat f = deterministic_forcing(setup.grid, spec, config.n_omega, config.dt);
    const CVec q0 = CVec::Zero(setup.grid.size());
    t.q0.push_back(q0);
    t.forcing.push_back(f);
    t.fom.push_back(integrate(setup.sys, q0, f, config.n_omega, config.dt));
    const double d = mean_square_norm({t.fom.back()}, setup.grid.weights);
    t.normalizers.push_back(d > 0 ? d : 1.0);
    t.labels.push_back(name);
  }
  return t;
}

Trained train(const Setup& setup, const TrainingData& data, const ExperimentConfig& config, double r_avg) {
  Trained t;
  t.basis = compute_spod(data.stack, setup.grid.weights, r_avg);
  t.ops = build_operators(setup.sys, t.basis, data, offline_options(config, r_avg), &t.report);
  t.pod = build_pod_galerkin(setup.sys, data.snapshots, static_cast<int>(std::lround(r_avg)), config.pod_closure,
                             config.p2_for(r_avg));
  return t;
}

// ---------------------------------------------------------------- evaluation

double MethodMetrics::mean() const {
  if (e_timeavg.empty()) return 0.0;
  return std::accumulate(e_timeavg.begin(), e_timeavg.end(), 0.0) / static_cast<double>(e_timeavg.size());
}

double MethodMetrics::mean_seconds() const {
  if (online_seconds.empty()) return 0.0;
  return std::accumulate(online_seconds.begin(), online_seconds.end(), 0.0) /
         static_cast<double>(online_seconds.size());
}

const MethodMetrics& MetricsRecord::method(const std::string& name) const {
  for (const auto& m : methods) {
    if (m.method == name) return m;
  }
  throw InvalidArgument("no metrics for method '" + name + "'");
}

MethodMetrics evaluate_ssop(const RomOperators& ops, const SpodBasis& basis, const TestSet& tests,
                            const ExperimentConfig& config, const std::string& name) {
  const std::size_t n = tests.fom.size();
  MethodMetrics m = empty_metrics(name, n);
  const SolveOptions options = solve_options(config);
#pragma omp parallel num_threads(std::max(1, config.threads))
  {
    OnlineModel model(ops);
#pragma omp for schedule(dynamic)
    for (int i = 0; i < static_cast<int>(n); ++i) {
      const auto ii = static_cast<std::size_t>(i);
      const SolveResult res = model.solve(tests.forcing[ii], tests.q0[ii], options);
      m.iterations[ii] = res.report.iterations;
      m.online_seconds[ii] = res.report.total_seconds;
      m.solver[ii] = to_string(res.report.method) + (res.report.converged ? "" : "-unconverged");
      if (res.a.allFinite()) {
        record(m, ii, tests.fom[ii], decode(res.a, basis), basis.weights, tests.normalizers[ii]);
      } else {
        record_failure(m, ii, static_cast<int>(tests.fom[ii].cols()));
      }
    }
  }
  return m;
}

MetricsRecord evaluate(const Setup& setup, const Trained& trained, const TestSet& tests,
                       const ExperimentConfig& config, const EvaluateOptions& options) {
  MetricsRecord rec;
  rec.experiment_id = config.experiment_id;
  rec.mu0 = setup.params.mu0;
  rec.r = trained.basis.r_avg;
  const std::size_t n = tests.fom.size();
  const RVec& w = setup.grid.weights;
  if (options.ssop) rec.methods.push_back(evaluate_ssop(trained.ops, trained.basis, tests, config, options.ssop_name));
  if (options.pod_g) {
    MethodMetrics m = empty_metrics("pod_g", n);
#pragma omp parallel for schedule(dynamic) num_threads(std::max(1, config.threads))
    for (int i = 0; i < static_cast<int>(n); ++i) {
      const auto ii = static_cast<std::size_t>(i);
      const int steps = static_cast<int>(tests.fom[ii].cols());
      try {
        const auto t0 = Clock::now();
        const CVec a0 = winner(trained.pod.phi, w, tests.q0[ii]);
        const CMat a = integrate_rom_coefficients(trained.pod, a0, tests.forcing[ii], steps, config.dt);
        m.online_seconds[ii] = seconds_since(t0);
        m.solver[ii] = "dopri5";
        record(m, ii, tests.fom[ii], trained.pod.phi * a, w, tests.normalizers[ii]);
      } catch (const IntegrationFailure&) {
        m.solver[ii] = "dopri5-failed";
        record_failure(m, ii, steps);
      }
    }
    rec.methods.push_back(std::move(m));
  }
  if (options.projections) {
    MethodMetrics sp = empty_metrics("spod_projection", n);
    MethodMetrics pp = empty_metrics("pod_projection", n);
    for (std::size_t i = 0; i < n; ++i) {
      record(sp, i, tests.fom[i], reconstruct_spod(tests.fom[i], trained.basis), w, tests.normalizers[i]);
      record(pp, i, tests.fom[i], reconstruct_pod(tests.fom[i], trained.pod.phi, w), w, tests.normalizers[i]);
    }
    rec.methods.push_back(std::move(sp));
    rec.methods.push_back(std::move(pp));
  }
  return rec;
}

// ---------------------------------------------------------------- outputs

const char* const kMetricsHeader = "experiment_id,method,mu0,r,trajectory_index,e_timeavg,iterations,online_seconds";

void write_metrics_csv(const fs::path& path, const std::vector<MetricsRecord>& records) {
  auto out = open_csv(path);
  out << kMetricsHeader << '\n';
  for (const auto& rec : records) {
    for (const auto& m : rec.methods) {
      for (std::size_t i = 0; i < m.e_timeavg.size(); ++i) {
        out << rec.experiment_id << ',' << m.method << ',' << rec.mu0 << ',' << rec.r << ',' << i << ','
            << m.e_timeavg[i] << ',' << m.iterations[i] << ',' << m.online_seconds[i] << '\n';
      }
    }
  }
}

void write_error_series_csv(const fs::path& path, const std::vector<MetricsRecord>& records, double dt) {
  auto out = open_csv(path);
  out << "experiment_id,method,mu0,r,trajectory_index,j,t,e_j\n";
  for (const auto& rec : records) {
    for (const auto& m : rec.methods) {
      for (std::size_t i = 0; i < m.e.size(); ++i) {
        for (Eigen::Index j = 0; j < m.e[i].size(); ++j) {
          out << rec.experiment_id << ',' << m.method << ',' << rec.mu0 << ',' << rec.r << ',' << i << ',' << j
              << ',' << j * dt << ',' << m.e[i][j] << '\n';
        }
      }
    }
  }
}

json summarize(const std::vector<MetricsRecord>& records) {
  json out = json::array();
  for (const auto& rec : records) {
    json methods = json::object();
    for (const auto& m : rec.methods) {
      const auto [lo, hi] = std::minmax_element(m.e_timeavg.begin(), m.e_timeavg.end());
      methods[m.method] = {{"e_timeavg_mean", format_double(m.mean())},
                           {"e_timeavg_min", format_double(m.e_timeavg.empty() ? 0.0 : *lo)},
                           {"e_timeavg_max", format_double(m.e_timeavg.empty() ? 0.0 : *hi)},
                           {"online_seconds_mean", m.mean_seconds()},
                           {"iterations_max", m.iterations.empty() ? 0 : *std::max_element(m.iterations.begin(),
                                                                                            m.iterations.end())},
                           {"trajectories", m.e_timeavg.size()}};
    }
    out.push_back({{"experiment_id", rec.experiment_id}, {"mu0", rec.mu0}, {"r", rec.r}, {"methods", methods}});
  }
  return out;
}

void write_spectrum_csv(const fs::path& path, const SpodBasis& basis) {
  auto out = open_csv(path);
  out << "k,omega,r_k,energy_total,energy_excluded_fraction\n";
  for (int k = 0; k < basis.n_omega(); ++k) {
    const RVec& e = basis.energies[static_cast<std::size_t>(k)];
    const double total = e.sum();
    const double kept = e.head(basis.r(k)).sum();
    out << k << ',' << basis.grid.omega(k) << ',' << basis.r(k) << ',' << total << ','
        << (total > 0 ? (total - kept) / total : 0.0) << '\n';
  }
}

void write_impact_csv(const fs::path& path, const TriadicTable& table, const FrequencyGrid& grid) {
  auto out = open_csv(path);
  out << "k,l,omega_k,omega_l,value\n";
  for (Eigen::Index k = 0; k < table.impact.rows(); ++k) {
    for (Eigen::Index l = 0; l < table.impact.cols(); ++l) {
      if (table.impact(k, l) == 0.0) continue;
      out << k << ',' << l << ',' << grid.omega(static_cast<int>(k)) << ',' << grid.omega(static_cast<int>(l)) << ','
          << table.impact(k, l) << '\n';
    }
  }
}

void write_timing_csv(const fs::path& path, const std::vector<TimingRow>& rows) {
  auto out = open_csv(path);
  out << "r,method,median_seconds,constant_seconds,per_iteration_seconds,iterations\n";
  for (const auto& r : rows) {
    out << r.r << ',' << r.method << ',' << r.median_seconds << ',' << r.constant_seconds << ','
        << r.per_iteration_seconds << ',' << r.iterations << '\n';
  }
}

void write_triadic_csv(const fs::path& path, const std::vector<TriadicRow>& rows) {
  auto out = open_csv(path);
  out << "epsilon,retained,fraction,seconds_per_evaluation,e_timeavg\n";
  for (const auto& r : rows) {
    out << r.epsilon << ',' << r.retained << ',' << r.fraction << ',' << r.seconds_per_evaluation << ','
        << r.e_timeavg << '\n';
  }
}

// ---------------------------------------------------------------- drivers

ExperimentResult run_experiment(const ExperimentConfig& config) {
  ExperimentResult result;
  const fs::path dir = config.output_dir;
  fs::create_directories(dir);
  io::write_json(dir / "config.json", json(config));
  std::string stage = "setup";
  const auto flush = [&] {
    write_metrics_csv(dir / "metrics.csv", result.records);
    write_error_series_csv(dir / "errors.csv", result.records, config.dt);
    result.summary = {{"experiment_id", config.experiment_id},
                      {"seed", config.seed},
                      {"ok", result.ok},
                      {"failed_stage", result.failed_stage},
                      {"records", summarize(result.records)}};
    json offline = json::array();
    for (const auto& r : result.offline) {
      offline.push_back({{"regularized_frequencies", r.regularized_frequencies},
                         {"max_gram_condition", r.max_gram_condition},
                         {"deim_condition", r.deim_condition},
                         {"seconds", r.seconds}});
    }
    result.summary["offline"] = offline;
    io::write_json(dir / "summary.json", result.summary);
  };
  try {
    const Setup setup = make_setup(config);
    stage = "training data";
    const TrainingData data = generate_training(setup, config);
    stage = "test data";
    const TestSet tests = generate_tests(setup, config);
    // Artifacts and the forcing suite use config.r when it is among the ranks.
    const auto ranks = config.ranks();
    const double primary = std::find(ranks.begin(), ranks.end(), config.r) != ranks.end() ? config.r : ranks.front();
    for (double r : ranks) {
      stage = "offline r=" + format_double(r);
      const Trained trained = train(setup, data, config, r);
      result.offline.push_back(trained.report);
      if (r == primary) {
        write_spectrum_csv(dir / "spectrum.csv", trained.basis);
        store::save_basis(dir / "basis", trained.basis);
        store::save_operators(dir / "operators", trained.ops, {{"mu0", setup.params.mu0}, {"r", r}});
        if (trained.ops.triadic && trained.ops.triadic->impact.size() > 0) {
          write_impact_csv(dir / "impact.csv", *trained.ops.triadic, trained.ops.grid);
        }
      }
      stage = "evaluation r=" + format_double(r);
      result.records.push_back(evaluate(setup, trained, tests, config));
      if (r == primary && !config.forcings.empty()) {
        stage = "forcing suite";
        result.forcing = run_forcing_suite(setup, trained, config);
        write_metrics_csv(dir / "forcing_metrics.csv", {*result.forcing});
        write_error_series_csv(dir / "forcing_errors.csv", {*result.forcing}, config.dt);
      }
    }
  } catch (const Error& e) {
    result.ok = false;
    result.failed_stage = stage + ": " + e.what();
  }
  flush();
  return result;
}

std::vector<SweepPoint> run_mu_sweep(const ExperimentConfig& config, SweepMode mode) {
  std::vector<SweepPoint> points;
  const bool per_mu = mode != SweepMode::Transfer;
  const bool transfer = mode != SweepMode::PerMu;
  std::optional<Setup> anchor_setup;
  std::optional<TrainingData> anchor_data;
  std::optional<Trained> anchor;
  std::optional<AffineBundle> bundle;
  if (transfer) {
    anchor_setup = make_setup(config, config.transfer_mu0);
    anchor_data = generate_training(*anchor_setup, config);
    anchor = train(*anchor_setup, *anchor_data, config, config.r);
    bundle.emplace(anchor_setup->sys, anchor->basis, *anchor_data, anchor->ops, offline_options(config, config.r));
  }
  for (double mu0 : config.mu0_list) {
    SweepPoint p;
    p.mu0 = mu0;
    try {
      const Setup setup = make_setup(config, mu0);
      p.shift = setup.sys.shift;
      const TestSet tests = generate_tests(setup, config);
      if (per_mu) {
        const TrainingData data = generate_training(setup, config);
        const Trained trained = train(setup, data, config, config.r);
        p.per_mu = evaluate(setup, trained, tests, config);
      }
      if (transfer) {
        const RomOperators ops = bundle->assemble({mu0}, setup.sys.shift);
        p.transfer = evaluate_ssop(ops, anchor->basis, tests, config, "ssop_transfer");
      }
    } catch (const Error& e) {
      p.error = e.what();
    }
    points.push_back(std::move(p));
  }
  return points;
}

void write_sweep_outputs(const fs::path& dir, const ExperimentConfig& config, const std::vector<SweepPoint>& points) {
  std::vector<MetricsRecord> records;
  json pts = json::array();
  for (const auto& p : points) {
    MetricsRecord rec;
    if (p.per_mu) rec = *p.per_mu;
    rec.experiment_id = config.experiment_id + "-sweep";
    rec.mu0 = p.mu0;
    rec.r = config.r;
    if (p.transfer) rec.methods.push_back(*p.transfer);
    if (!rec.methods.empty()) records.push_back(rec);
    pts.push_back({{"mu0", p.mu0}, {"shift", p.shift}, {"error", p.error}});
  }
  write_metrics_csv(dir / "sweep_metrics.csv", records);
  io::write_json(dir / "sweep_summary.json", {{"points", pts}, {"records", summarize(records)}});
}

MetricsRecord run_forcing_suite(const Setup& setup, const Trained& trained, const ExperimentConfig& config,
                                TestSet* suite_out) {
  TestSet suite = generate_forcing_suite(setup, config);
  MetricsRecord rec = evaluate(setup, trained, suite, config);
  rec.experiment_id = config.experiment_id + "-forcing";
  if (suite_out) *suite_out = std::move(suite);
  return rec;
}

LinearFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("line fit needs at least two matched points");
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LinearFit f;
  f.slope = sxx > 0 ? sxy / sxx : 0.0;
  f.intercept = my - f.slope * mx;
  f.r2 = (sxx > 0 && syy > 0) ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

std::vector<TimingRow> run_timing_study(const Setup& setup, const TrainingData& data, const TestSet& tests,
                                        const ExperimentConfig& config) {
  std::vector<TimingRow> rows;
  const SolveOptions options = solve_options(config);
  const std::size_t n = tests.fom.size();
  const RVec& w = setup.grid.weights;
  for (double r : config.ranks()) {
    const Trained trained = train(setup, data, config, r);
    OnlineModel model(trained.ops);
    std::vector<double> ssop_t, pod_t, const_t, iter_t;
    int iterations = 0;
    for (int rep = 0; rep < config.timing_repeats; ++rep) {
      double total = 0, constant = 0, nonlinear = 0;
      long evals = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const SolveResult res = model.solve(tests.forcing[i], tests.q0[i], options);
        total += res.report.total_seconds;
        constant += res.report.constant_seconds;
        nonlinear += res.report.nonlinear_seconds;
        evals += res.report.nonlinear_evaluations;
        iterations = std::max(iterations, res.report.iterations);
      }
      ssop_t.push_back(total / static_cast<double>(n));
      const_t.push_back(constant / static_cast<double>(n));
      iter_t.push_back(evals > 0 ? nonlinear / static_cast<double>(evals) : 0.0);
      double pod_total = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto t0 = Clock::now();
        const CVec a0 = winner(trained.pod.phi, w, tests.q0[i]);
        try {
          integrate_rom_coefficients(trained.pod, a0, tests.forcing[i], static_cast<int>(tests.fom[i].cols()),
                                     config.dt);
        } catch (const IntegrationFailure&) {
        }
        pod_total += seconds_since(t0);
      }
      pod_t.push_back(pod_total / static_cast<double>(n));
    }
    rows.push_back({r, "ssop", median(ssop_t), median(const_t), median(iter_t), iterations});
    rows.push_back({r, "pod_g", median(pod_t), 0.0, 0.0, 0});
  }
  return rows;
}

std::vector<TriadicRow> run_triadic_study(const Setup& setup, const TrainingData& data, const TestSet& tests,
                                          const ExperimentConfig& config) {
  std::vector<TriadicRow> rows;
  const SpodBasis basis = compute_spod(data.stack, setup.grid.weights, config.r);
  for (double eps : config.epsilon_list) {
    OfflineOptions options = offline_options(config, config.r);
    options.closure = ClosureKind::Triadic;
    options.epsilon = eps;
    options.record_impact = false;
    const RomOperators ops = build_operators(setup.sys, basis, data, options);
    TriadicRow row;
    row.epsilon = eps;
    row.retained = ops.triadic->retained;
    row.fraction = ops.triadic->retained_fraction();
    const MethodMetrics m = evaluate_ssop(ops, basis, tests, config);
    row.e_timeavg = m.mean();
    // Time the closure alone at a representative state.
    OnlineModel model(ops);
    const CVec a = model.solve(tests.forcing.front(), tests.q0.front(), solve_options(config)).a;
    CVec w(a.size());
    std::vector<double> samples;
    for (int rep = 0; rep < config.timing_repeats; ++rep) {
      const int inner = 5;
      const auto t0 = Clock::now();
      for (int i = 0; i < inner; ++i) model.nonlinear_term(a, w);
      samples.push_back(seconds_since(t0) / inner);
    }
    row.seconds_per_evaluation = median(samples);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace ssop::bench
