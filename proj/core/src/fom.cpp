#include "ssop/fom.hpp"

#include <algorithm>
#include <random>
#include <set>

#include <Eigen/Eigenvalues>

#include "ssop/fft.hpp"
#include "ssop/io.hpp"

namespace ssop {

using nlohmann::json;

namespace {

// Weideman-Reddy poldif: derivative matrices of order 1..M for weighted interpolants.
std::vector<RMat> poldif(const RVec& x, const RVec& alpha_log, const RMat& beta) {
  const Eigen::Index n = x.size();
  const Eigen::Index m = beta.rows();
  RMat dx(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index j = 0; j < n; ++j) dx(k, j) = k == j ? 1.0 : x[k] - x[j];
  }
  // c_k = alpha_k prod_j (x_k - x_j), tracked as log magnitude and sign.
  RVec logc(n), sgn(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    double s = 1.0, l = alpha_log[k];
    for (Eigen::Index j = 0; j < n; ++j) {
      l += std::log(std::abs(dx(k, j)));
      if (dx(k, j) < 0) s = -s;
    }
    logc[k] = l;
    sgn[k] = s;
  }
  RMat c(n, n), z(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    for (Eigen::Index j = 0; j < n; ++j) {
      c(k, j) = sgn[k] * sgn[j] * std::exp(logc[k] - logc[j]);
      z(k, j) = k == j ? 0.0 : 1.0 / dx(k, j);
    }
  }
  // Column k of xm holds z(k, j) for j != k.
  RMat xm(n - 1, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::Index r = 0;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (j != k) xm(r++, k) = z(k, j);
    }
  }
  RMat y = RMat::Ones(n - 1, n);
  RMat d = RMat::Identity(n, n);
  std::vector<RMat> out;
  for (Eigen::Index ell = 1; ell <= m; ++ell) {
    RMat stacked(n, n);
    stacked.row(0) = beta.row(ell - 1);
    stacked.bottomRows(n - 1) = static_cast<double>(ell) * y.topRows(n - 1).cwiseProduct(xm);
    for (Eigen::Index r = 1; r < n; ++r) stacked.row(r) += stacked.row(r - 1);
    y = stacked;
    const RVec diag = d.diagonal();
    RMat next = static_cast<double>(ell) * z.cwiseProduct(c.cwiseProduct(diag.replicate(1, n)) - d);
    next.diagonal() = y.row(n - 1).transpose();
    d = next;
    out.push_back(d);
  }
  return out;
}

// Normalized Hermite functions psi_{n-1}(xi), psi_n(xi) by the stable recurrence.
std::pair<double, double> hermite_functions(int n, double xi) {
  double prev = 0.0;
  double cur = std::pow(kPi, -0.25) * std::exp(-0.5 * xi * xi);
  for (int k = 0; k < n; ++k) {
    const double next = std::sqrt(2.0 / (k + 1)) * xi * cur - std::sqrt(static_cast<double>(k) / (k + 1)) * prev;
    prev = cur;
    cur = next;
  }
  return {prev, cur};
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

SpaceGrid build_hermite_grid(int n_x, double x_max) {
  if (n_x < 4) throw InvalidArgument("hermite grid needs at least 4 points");
  if (!(x_max > 0)) throw InvalidArgument("x_max must be positive");
  // Golub-Welsch: nodes are eigenvalues of the Jacobi matrix.
  RMat jac = RMat::Zero(n_x, n_x);
  for (int k = 1; k < n_x; ++k) jac(k - 1, k) = jac(k, k - 1) = std::sqrt(k / 2.0);
  Eigen::SelfAdjointEigenSolver<RMat> es(jac, Eigen::EigenvaluesOnly);
  RVec xi = es.eigenvalues();
  // Newton polish on psi_n(xi) = 0 using psi_n' = sqrt(2n) psi_{n-1} - xi psi_n.
  for (int it = 0; it < 3; ++it) {
    for (int k = 0; k < n_x; ++k) {
      const auto [pm1, p] = hermite_functions(n_x, xi[k]);
      const double dp = std::sqrt(2.0 * n_x) * pm1 - xi[k] * p;
      if (dp != 0.0) xi[k] -= p / dp;
    }
  }
  std::sort(xi.data(), xi.data() + n_x);

  const double scale = xi[n_x - 1] / x_max;
  RMat beta(2, n_x);
  beta.row(0) = -xi.transpose();
  beta.row(1) = (xi.array().square() - 1.0).matrix().transpose();
  const RVec alpha_log = -0.5 * xi.array().square();
  auto dm = poldif(xi, alpha_log, beta);

  SpaceGrid g;
  g.scale = scale;
  g.x = xi / scale;
  g.d1 = dm[0] * scale;
  g.d2 = dm[1] * scale * scale;
  g.weights.resize(n_x);
  // Gauss-Hermite weight times e^{xi^2}, i.e. 1 / (n psi_{n-1}^2), mapped to x.
  for (int k = 0; k < n_x; ++k) {
    const double pm1 = hermite_functions(n_x, xi[k]).first;
    g.weights[k] = 1.0 / (n_x * pm1 * pm1) / scale;
  }
  return g;
}

void to_json(json& j, const GlParams& p) {
  j = json{{"nu", {p.nu.real(), p.nu.imag()}},
           {"gamma", {p.gamma.real(), p.gamma.imag()}},
           {"c_mu", p.c_mu},
           {"mu2", p.mu2},
           {"mu0", p.mu0},
           {"alpha", p.alpha},
           {"kappa", p.kappa},
           {"nonlinearity", p.kind == NonlinearityKind::Cubic ? "cubic" : "quadratic"},
           {"stability_shift", p.stability_shift}};
}

namespace {

cd complex_from_json(const json& v, const char* key) {
  if (v.is_number()) return {v.get<double>(), 0.0};
  if (v.is_array() && v.size() == 2) return {v[0].get<double>(), v[1].get<double>()};
  throw InvalidArgument(std::string("expected [re, im] for ") + key);
}

}  // namespace

void from_json(const json& j, GlParams& p) {
  io::reject_unknown(j, {"nu", "gamma", "c_mu", "mu2", "mu0", "alpha", "kappa", "nonlinearity", "stability_shift"},
                 "system");
  p = GlParams{};
  if (j.contains("nu")) p.nu = complex_from_json(j["nu"], "nu");
  if (j.contains("gamma")) p.gamma = complex_from_json(j["gamma"], "gamma");
  p.c_mu = j.value("c_mu", p.c_mu);
  p.mu2 = j.value("mu2", p.mu2);
  p.mu0 = j.value("mu0", p.mu0);
  p.alpha = j.value("alpha", p.alpha);
  p.kappa = j.value("kappa", p.kappa);
  p.stability_shift = j.value("stability_shift", p.stability_shift);
  const std::string kind = j.value("nonlinearity", std::string("cubic"));
  if (kind == "cubic") {
    p.kind = NonlinearityKind::Cubic;
  } else if (kind == "quadratic") {
    p.kind = NonlinearityKind::Quadratic;
  } else {
    throw InvalidArgument("nonlinearity must be 'cubic' or 'quadratic'");
  }
}

std::vector<cd> AffineOperator::coefficients(const std::vector<double>& mu) const {
  std::vector<cd> z;
  z.reserve(terms.size());
  for (const auto& t : terms) z.push_back(t.zeta(mu));
  return z;
}

CMat AffineOperator::assemble(const std::vector<double>& mu) const {
  if (terms.empty()) throw InvalidArgument("empty affine operator");
  CMat a = CMat::Zero(terms.front().a.rows(), terms.front().a.cols());
  for (const auto& t : terms) a += t.zeta(mu) * t.a;
  return a;
}

AffineOperator constant_operator(const CMat& a) {
  AffineOperator op;
  op.terms.push_back({"A", [](const std::vector<double>&) { return cd{1.0, 0.0}; }, a});
  return op;
}

AffineOperator build_gl_operator(const SpaceGrid& grid, const GlParams& params) {
  const int n = grid.size();
  CMat a1 = -params.nu * grid.d1.cast<cd>() + params.gamma * grid.d2.cast<cd>();
  for (int i = 0; i < n; ++i) {
    a1(i, i) += -params.c_mu * params.c_mu + 0.5 * params.mu2 * grid.x[i] * grid.x[i];
  }
  AffineOperator op;
  op.terms.push_back({"base", [](const std::vector<double>&) { return cd{1.0, 0.0}; }, std::move(a1)});
  op.terms.push_back({"mu0", [](const std::vector<double>& mu) { return cd{mu.at(0), 0.0}; },
                      CMat::Identity(n, n)});
  return op;
}

CMat gl_operator_direct(const SpaceGrid& grid, const GlParams& params) {
  const int n = grid.size();
  CMat a = -params.nu * grid.d1.cast<cd>() + params.gamma * grid.d2.cast<cd>();
  for (int i = 0; i < n; ++i) {
    a(i, i) += params.mu0 - params.c_mu * params.c_mu + 0.5 * params.mu2 * grid.x[i] * grid.x[i];
  }
  return a;
}

double spectral_abscissa(const CMat& a) {
  Eigen::ComplexEigenSolver<CMat> es(a, false);
  if (es.info() != Eigen::Success) throw NumericalError("eigenvalue computation failed");
  return es.eigenvalues().real().maxCoeff();
}

double default_stability_shift(const CMat& a, double margin) {
  const double s = spectral_abscissa(a);
  return s >= 0.0 ? s + margin : 0.0;
}

Nonlinearity::Nonlinearity(std::vector<CMat> extra_maps, Kernel kernel, int degree)
    : maps_(std::move(extra_maps)), kernel_(std::move(kernel)), degree_(degree) {}

CMat Nonlinearity::features(const CVec& q) const {
  CMat f(q.size(), n_features());
  f.col(0) = q;
  for (std::size_t i = 0; i < maps_.size(); ++i) f.col(static_cast<Eigen::Index>(i) + 1).noalias() = maps_[i] * q;
  return f;
}

void Nonlinearity::pointwise(const CMat& features, CVec& out) const {
  out.resize(features.rows());
  if (!kernel_) {
    out.setZero();
    return;
  }
  kernel_(features, out);
}

CVec Nonlinearity::operator()(const CVec& q) const {
  CVec out;
  if (!kernel_) return CVec::Zero(q.size());
  pointwise(features(q), out);
  return out;
}

Nonlinearity gl_nonlinearity(const SpaceGrid& grid, const GlParams& params) {
  if (params.kind == NonlinearityKind::Cubic) {
    const double alpha = params.alpha;
    return Nonlinearity(
        {},
        [alpha](const CMat& f, CVec& out) {
          out = -alpha * f.col(0).cwiseProduct(f.col(0).cwiseAbs2().cast<cd>());
        },
        3);
  }
  const double kappa = params.kappa;
  return Nonlinearity(
      {grid.d1.cast<cd>()},
      [kappa](const CMat& f, CVec& out) { out = kappa * f.col(0).cwiseProduct(f.col(1)); }, 2);
}

CMat System::linear_operator() const {
  CMat a = op.assemble(mu);
  if (shift != 0.0) a.diagonal().array() -= shift;
  return a;
}

CVec System::nonlinear_term(const CVec& q) const {
  CVec n = nonlinearity(q);
  if (shift != 0.0) n += shift * q;
  return n;
}

std::string to_string(ForcingKind kind) {
  switch (kind) {
    case ForcingKind::StochasticGaussian: return "stochastic";
    case ForcingKind::Periodic: return "periodic";
    case ForcingKind::Pulse: return "pulse";
    case ForcingKind::Quasiperiodic: return "quasiperiodic";
    case ForcingKind::Series: return "series";
    case ForcingKind::Custom: return "custom";
  }
  return "unknown";
}

ForcingKind forcing_kind_from_string(const std::string& name) {
  for (auto k : {ForcingKind::StochasticGaussian, ForcingKind::Periodic, ForcingKind::Pulse,
                 ForcingKind::Quasiperiodic, ForcingKind::Series, ForcingKind::Custom}) {
    if (to_string(k) == name) return k;
  }
  throw InvalidArgument("unknown forcing kind '" + name + "'");
}

void to_json(json& j, const ForcingSpec& s) {
  j = json{{"kind", to_string(s.kind)},
           {"amplitude", s.amplitude},
           {"support", {s.support_lo, s.support_hi}},
           {"xbar", s.xbar},
           {"temporal_rate", s.temporal_rate},
           {"seed", s.seed},
           {"omega", s.omega},
           {"pulse_center", s.pulse_center},
           {"pulse_width", s.pulse_width}};
  if (!s.samples.empty()) j["samples"] = s.samples;
}

void from_json(const json& j, ForcingSpec& s) {
  io::reject_unknown(j, {"kind", "amplitude", "support", "xbar", "temporal_rate", "seed", "omega",
                     "pulse_center", "pulse_width", "samples"},
                 "forcing");
  s = ForcingSpec{};
  s.kind = forcing_kind_from_string(j.value("kind", std::string("stochastic")));
  s.amplitude = j.value("amplitude", s.amplitude);
  if (j.contains("support")) {
    const auto& sup = j["support"];
    if (!sup.is_array() || sup.size() != 2) throw InvalidArgument("support must be [lo, hi]");
    s.support_lo = sup[0].get<double>();
    s.support_hi = sup[1].get<double>();
  }
  s.xbar = j.value("xbar", s.xbar);
  s.temporal_rate = j.value("temporal_rate", s.temporal_rate);
  s.seed = j.value("seed", s.seed);
  s.omega = j.value("omega", s.omega);
  s.pulse_center = j.value("pulse_center", s.pulse_center);
  s.pulse_width = j.value("pulse_width", s.pulse_width);
  if (j.contains("samples")) s.samples = j["samples"].get<std::vector<double>>();
}

std::vector<int> forcing_support(const SpaceGrid& grid, const ForcingSpec& spec) {
  std::vector<int> idx;
  for (int i = 0; i < grid.size(); ++i) {
    if (grid.x[i] >= spec.support_lo && grid.x[i] <= spec.support_hi) idx.push_back(i);
  }
  if (idx.empty()) throw InvalidArgument("forcing support contains no grid points");
  return idx;
}

CMat forcing_input_map(const SpaceGrid& grid, const ForcingSpec& spec) {
  const auto idx = forcing_support(grid, spec);
  CMat b = CMat::Zero(grid.size(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t f = 0; f < idx.size(); ++f) b(idx[f], static_cast<Eigen::Index>(f)) = 1.0;
  return b;
}

StochasticForcing::StochasticForcing(const SpaceGrid& grid, const ForcingSpec& spec) : spec_(spec) {
  const auto idx = forcing_support(grid, spec);
  const auto nf = static_cast<Eigen::Index>(idx.size());
  cov_.resize(nf, nf);
  for (Eigen::Index a = 0; a < nf; ++a) {
    for (Eigen::Index b = 0; b < nf; ++b) {
      const double x1 = grid.x[idx[a]], x2 = grid.x[idx[b]];
      const double d1 = x1 - spec.xbar, d2 = x2 - spec.xbar, d12 = x2 - x1;
      cov_(a, b) = std::exp(-(d1 * d1 + d2 * d2 + d12 * d12));
    }
  }
  Eigen::SelfAdjointEigenSolver<RMat> es(cov_);
  RVec ev = es.eigenvalues();
  const double top = ev.maxCoeff();
  if (ev.minCoeff() < -1e-12 * top) {
    warn("spatial forcing covariance is not PSD; clipping negative eigenvalues");
  }
  ev = ev.cwiseMax(0.0);
  factor_ = es.eigenvectors() * ev.cwiseSqrt().asDiagonal();
}

CMat StochasticForcing::sample(int n_steps, double dt, std::uint64_t seed) const {
  if (n_steps <= 0) return CMat(n_inputs(), 0);
  // Circulant embedding of the temporal covariance on a padded periodic grid.
  int m = 1;
  while (m < 2 * n_steps) m <<= 1;
  CVec row(m);
  for (int j = 0; j < m; ++j) {
    const int lag = std::min(j, m - j);
    const double tau = spec_.temporal_rate * lag * dt;
    row[j] = std::exp(-tau * tau);
  }
  const CVec eig = fft::forward(row);
  RVec sq(m);
  for (int j = 0; j < m; ++j) sq[j] = std::sqrt(std::max(eig[j].real(), 0.0) / m);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
  const Eigen::Index nf = n_inputs();
  CMat latent(nf, n_steps);
  CVec z(m);
  for (Eigen::Index f = 0; f < nf; ++f) {
    for (int j = 0; j < m; ++j) z[j] = sq[j] * cd(normal(rng), normal(rng));
    const CVec path = fft::forward(z);
    latent.row(f) = path.head(n_steps).transpose();
  }
  return spec_.amplitude * factor_.cast<cd>() * latent;
}

double forcing_signal(const ForcingSpec& spec, double t) {
  const double w = spec.omega;
  const auto pulse = [](double t, double c, double width) {
    const double s = (t - c) / width;
    return std::exp(-s * s);
  };
  switch (spec.kind) {
    case ForcingKind::Periodic:
      return std::sin(w * t);
    case ForcingKind::Pulse:
      return pulse(t, spec.pulse_center, spec.pulse_width);
    case ForcingKind::Quasiperiodic:
      return 0.5 * (std::sin(w * t) + std::sin(std::numbers::sqrt2 * w * t + 1.0));
    case ForcingKind::Series: {
      // A pulse, a smoothed step, then a quasiperiodic burst; quiet afterwards.
      const double ramp = [&] {
        const auto smooth = [](double s) { return 0.5 * (1.0 + std::tanh(s)); };
        return smooth((t - 50.0) / 2.0) * smooth((90.0 - t) / 2.0);
      }();
      const double burst = (t > 100.0 && t < 150.0)
                               ? std::pow(std::sin(kPi * (t - 100.0) / 50.0), 2) *
                                     0.5 * (std::sin(w * t) + std::sin(std::numbers::sqrt2 * w * t))
                               : 0.0;
      return pulse(t, 20.0, spec.pulse_width) + 0.5 * ramp + burst;
    }
    default:
      throw InvalidArgument("forcing_signal needs a deterministic kind");
  }
}

CMat deterministic_forcing(const SpaceGrid& grid, const ForcingSpec& spec, int n_steps, double dt) {
  const auto idx = forcing_support(grid, spec);
  const auto nf = static_cast<Eigen::Index>(idx.size());
  CVec profile(nf);
  for (Eigen::Index f = 0; f < nf; ++f) {
    const double d = grid.x[idx[f]] - spec.xbar;
    profile[f] = std::sqrt(std::exp(-d * d));
  }
  CMat out(nf, n_steps);
  for (int j = 0; j < n_steps; ++j) {
    double s = 0.0;
    if (spec.kind == ForcingKind::Custom) {
      if (spec.samples.size() < static_cast<std::size_t>(n_steps)) {
        throw InvalidArgument("custom forcing has fewer samples than steps");
      }
      s = spec.samples[static_cast<std::size_t>(j)];
    } else {
      s = forcing_signal(spec, j * dt);
    }
    out.col(j) = spec.amplitude * s * profile;
  }
  return out;
}

CMat sample_forcing(const SpaceGrid& grid, const ForcingSpec& spec, int n_steps, double dt) {
  if (spec.kind == ForcingKind::StochasticGaussian) {
    return StochasticForcing(grid, spec).sample(n_steps, dt, spec.seed);
  }
  return deterministic_forcing(grid, spec, n_steps, dt);
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  return splitmix64(splitmix64(root) ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

std::string to_string(ForcingInterpolation mode) {
  return mode == ForcingInterpolation::Linear ? "linear" : "trigonometric";
}

ForcingInterpolation interpolation_from_string(const std::string& name) {
  if (name == "trigonometric") return ForcingInterpolation::Trigonometric;
  if (name == "linear") return ForcingInterpolation::Linear;
  throw InvalidArgument("unknown forcing interpolation '" + name + "'");
}

ForcingSeries::ForcingSeries(const CMat& b, const CMat& samples, double dt, ForcingInterpolation mode)
    : mode_(mode), n_(samples.cols()), dt_(dt) {
  if (n_ == 0) return;
  if (b.cols() != samples.rows()) throw InvalidArgument("forcing samples do not match B");
  if (mode_ == ForcingInterpolation::Linear) {
    values_ = b * samples;
  } else {
    b_ = b;
    values_ = fft::forward(samples) / static_cast<double>(n_);
  }
}

void ForcingSeries::add_to(double t, CVec& out) const {
  if (n_ == 0) return;
  if (mode_ == ForcingInterpolation::Trigonometric) {
    // Powers of z = e^{2 pi i t / T} by recurrence; indices at or above n/2 are negative frequencies.
    const cd z = std::polar(1.0, 2.0 * kPi * t / (static_cast<double>(n_) * dt_));
    const Eigen::Index half = n_ / 2;
    CVec f = values_.col(0);
    cd zp = 1.0;
    for (Eigen::Index k = 1; k < half; ++k) {
      zp *= z;
      f += zp * values_.col(k);
    }
    const cd zc = std::conj(z);
    cd zn = 1.0;
    for (Eigen::Index k = n_ - 1; k >= half && k > 0; --k) {
      zn *= zc;
      f += zn * values_.col(k);
    }
    out.noalias() += b_ * f;
    return;
  }
  const double s = t / dt_;
  auto j = static_cast<Eigen::Index>(std::floor(s));
  if (j >= n_ - 1) {
    out += values_.col(n_ - 1);
    return;
  }
  if (j < 0) {
    out += values_.col(0);
    return;
  }
  const double th = s - static_cast<double>(j);
  out += (1.0 - th) * values_.col(j) + th * values_.col(j + 1);
}

CMat integrate(const System& sys, const CVec& q0, const CMat& forcing, int n_steps, double dt,
               const IntegrateOptions& options, OdeStats* stats) {
  if (q0.size() != sys.size()) throw InvalidArgument("initial condition has wrong length");
  if (n_steps <= 0) throw InvalidArgument("n_steps must be positive");
  if (forcing.cols() > 0 && forcing.cols() < n_steps) throw InvalidArgument("forcing shorter than trajectory");
  const bool split = options.split_shift;
  const CMat a = split ? sys.linear_operator() : sys.unshifted_operator();
  const ForcingSeries series(sys.b, forcing, dt, options.interpolation);
  const auto rhs = [&](double t, const CVec& y, CVec& dy) {
    dy.noalias() = a * y;
    series.add_to(t, dy);
    if (!sys.nonlinearity.empty()) dy += split ? sys.nonlinear_term(y) : sys.nonlinearity(y);
    else if (split && sys.shift != 0.0) dy += sys.shift * y;
  };
  std::vector<double> times(static_cast<std::size_t>(n_steps));
  for (int j = 0; j < n_steps; ++j) times[static_cast<std::size_t>(j)] = j * dt;
  return integrate_dense(rhs, q0, times, options.ode, stats);
}

}  // namespace ssop
