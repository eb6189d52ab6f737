#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ssop/common.hpp"
#include "ssop/integrator.hpp"

namespace ssop {

// Hermite collocation grid on the real line.
struct SpaceGrid {
  RVec x;
  RMat d1;
  RMat d2;
  RVec weights;  // diagonal of W
  double scale = 1.0;

  int size() const { return static_cast<int>(x.size()); }
};

// Gauss-Hermite nodes scaled so the outermost node sits at +-x_max.
SpaceGrid build_hermite_grid(int n_x, double x_max = 40.0);

enum class NonlinearityKind { Cubic, Quadratic };

struct GlParams {
  cd nu{2.0, 0.4};
  cd gamma{1.0, -1.0};
  double c_mu = 0.2;
  double mu2 = -0.01;
  double mu0 = 0.229;
  double alpha = 1.0;
  double kappa = 5.0;
  NonlinearityKind kind = NonlinearityKind::Cubic;
  // Negative selects the default rule (shift only when unstable).
  double stability_shift = -1.0;
};

void to_json(nlohmann::json& j, const GlParams& p);
void from_json(const nlohmann::json& j, GlParams& p);

struct AffineTerm {
  std::string name;
  std::function<cd(const std::vector<double>&)> zeta;
  CMat a;
};

// A(mu) = sum_j zeta_j(mu) A_j
struct AffineOperator {
  std::vector<AffineTerm> terms;

  int size() const { return terms.empty() ? 0 : static_cast<int>(terms.front().a.rows()); }
  std::vector<cd> coefficients(const std::vector<double>& mu) const;
  CMat assemble(const std::vector<double>& mu) const;
};

AffineOperator constant_operator(const CMat& a);

// Terms: A_1 = -nu d1 + gamma d2 + diag(-c_mu^2 + mu2 x^2/2) with zeta = 1, and I with zeta = mu0.
AffineOperator build_gl_operator(const SpaceGrid& grid, const GlParams& params);
CMat gl_operator_direct(const SpaceGrid& grid, const GlParams& params);

double spectral_abscissa(const CMat& a);
// max(0, abscissa) + margin when unstable, otherwise 0.
double default_stability_shift(const CMat& a, double margin = 0.1);

// Pointwise nonlinearity n(q)_i = g((q)_i, (L_1 q)_i, ..., (L_{F-1} q)_i).
class Nonlinearity {
 public:
  using Kernel = std::function<void(const CMat& features, CVec& out)>;

  Nonlinearity() = default;
  Nonlinearity(std::vector<CMat> extra_maps, Kernel kernel, int degree);

  bool empty() const { return !kernel_; }
  // Polynomial degree if homogeneous, 0 otherwise.
  int degree() const { return degree_; }
  int n_features() const { return 1 + static_cast<int>(maps_.size()); }
  // Map for feature f >= 1; feature 0 is the state itself.
  const CMat& feature_map(int f) const { return maps_.at(static_cast<std::size_t>(f - 1)); }

  CMat features(const CVec& q) const;
  void pointwise(const CMat& features, CVec& out) const;
  CVec operator()(const CVec& q) const;

 private:
  std::vector<CMat> maps_;
  Kernel kernel_;
  int degree_ = 0;
};

Nonlinearity gl_nonlinearity(const SpaceGrid& grid, const GlParams& params);

// Everything the reduction needs from a full-order model.
struct System {
  AffineOperator op;
  std::vector<double> mu;
  CMat b;
  RVec weights;
  Nonlinearity nonlinearity;
  double shift = 0.0;

  int size() const { return op.size(); }
  int n_inputs() const { return static_cast<int>(b.cols()); }
  CMat unshifted_operator() const { return op.assemble(mu); }
  // A - shift I, the operator seen by the reduced model.
  CMat linear_operator() const;
  CVec nonlinear_term(const CVec& q) const;  // n(q) + shift q
};

enum class ForcingKind { StochasticGaussian, Periodic, Pulse, Quasiperiodic, Series, Custom };

std::string to_string(ForcingKind kind);
ForcingKind forcing_kind_from_string(const std::string& name);

struct ForcingSpec {
  ForcingKind kind = ForcingKind::StochasticGaussian;
  double amplitude = 0.1;
  double support_lo = -12.0;
  double support_hi = -8.0;
  double xbar = -10.0;
  double temporal_rate = 0.3;  // covariance exp(-(rate * tau)^2)
  std::uint64_t seed = 0;
  double omega = 0.5;          // periodic and quasiperiodic base frequency
  double pulse_center = 40.0;
  double pulse_width = 4.0;
  std::vector<double> samples;  // Custom: f(t_j) samples
};

void to_json(nlohmann::json& j, const ForcingSpec& s);
void from_json(const nlohmann::json& j, ForcingSpec& s);

// Indices of grid points inside the forcing support and the matching input map B.
std::vector<int> forcing_support(const SpaceGrid& grid, const ForcingSpec& spec);
CMat forcing_input_map(const SpaceGrid& grid, const ForcingSpec& spec);

// Spatial covariance on the support points and its symmetric factor.
class StochasticForcing {
 public:
  StochasticForcing(const SpaceGrid& grid, const ForcingSpec& spec);

  const RMat& spatial_covariance() const { return cov_; }
  int n_inputs() const { return static_cast<int>(cov_.rows()); }
  // N_f x n_steps complex Gaussian samples on t_j = j dt.
  CMat sample(int n_steps, double dt, std::uint64_t seed) const;

 private:
  ForcingSpec spec_;
  RMat cov_;
  RMat factor_;
};

// Deterministic time signals; zero IC experiments use these.
double forcing_signal(const ForcingSpec& spec, double t);
CMat deterministic_forcing(const SpaceGrid& grid, const ForcingSpec& spec, int n_steps, double dt);
CMat sample_forcing(const SpaceGrid& grid, const ForcingSpec& spec, int n_steps, double dt);

// Splitmix64 based stream derivation for per-trajectory seeds.
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);

// How B f(t) is evaluated between samples.
//   Trigonometric: the periodic band-limited interpolant (1/N) sum_k f_hat_k e^{i omega_k t} of the N samples,
//                  the forcing the reduced model assumes.
//   Linear: piecewise-linear, held constant past the last sample.
enum class ForcingInterpolation { Trigonometric, Linear };

std::string to_string(ForcingInterpolation mode);
ForcingInterpolation interpolation_from_string(const std::string& name);

class ForcingSeries {
 public:
  ForcingSeries() = default;
  ForcingSeries(const CMat& b, const CMat& samples, double dt,
                ForcingInterpolation mode = ForcingInterpolation::Trigonometric);

  bool empty() const { return n_ == 0; }
  void add_to(double t, CVec& out) const;

 private:
  ForcingInterpolation mode_ = ForcingInterpolation::Trigonometric;
  CMat b_;
  CMat values_;  // B f_j (linear) or f_hat / N (trigonometric)
  Eigen::Index n_ = 0;
  double dt_ = 1.0;
};

struct IntegrateOptions {
  OdeOptions ode;
  // Integrate the shifted split (A - aI, n + aq) instead of (A, n).
  bool split_shift = false;
  ForcingInterpolation interpolation = ForcingInterpolation::Trigonometric;
};

// States at t_j = j dt, j = 0..n_steps-1 (column 0 is q0).
CMat integrate(const System& sys, const CVec& q0, const CMat& forcing, int n_steps, double dt,
               const IntegrateOptions& options = {}, OdeStats* stats = nullptr);

}  // namespace ssop
