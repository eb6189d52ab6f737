#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ssop/offline.hpp"

namespace ssop {

enum class SolverKind { Auto, FixedPoint, PseudoTime };

std::string to_string(SolverKind kind);
SolverKind solver_from_string(const std::string& name);

// Reduced map a -> w(a) whose fixed points a = c + w(a) are sought.
using ReducedMap = std::function<void(const CVec& a, CVec& w)>;
// Optional transformation of the next iterate (acceleration hook); identity when empty.
using IterateHook = std::function<void(int iteration, const CVec& previous, CVec& next)>;

struct SolveOptions {
  SolverKind solver = SolverKind::Auto;
  double tol = 1e-10;
  int max_iterations = 100;
  long max_pseudo_steps = 5000;
  OdeOptions pseudo_ode{1e-8, 1e-12};
  IterateHook hook;
};

struct SolveReport {
  SolverKind method = SolverKind::FixedPoint;
  bool converged = false;
  bool diverged = false;
  int iterations = 0;
  // Relative updates for fixed point, relative residuals for pseudo-time.
  std::vector<double> residual_history;
  bool monotone = true;
  double constant_seconds = 0.0;
  double nonlinear_seconds = 0.0;  // summed over map evaluations
  long nonlinear_evaluations = 0;
  double total_seconds = 0.0;
  std::string message;
};

void to_json(nlohmann::json& j, const SolveReport& r);

struct SolveResult {
  CVec a;
  SolveReport report;
};

// a^0 = 0, a^{i+1} = c + w(a^i).
SolveResult fixed_point_solve(const CVec& c, const ReducedMap& w, const SolveOptions& options);
// Steady state of da/dtau = c + w(a) - a from a(0) = c.
SolveResult pseudo_time_solve(const CVec& c, const ReducedMap& w, const SolveOptions& options);
// Dispatch on options.solver; Auto falls back to pseudo-time when the fixed point fails.
SolveResult solve_reduced(const CVec& c, const ReducedMap& w, const SolveOptions& options);

// Central-difference Jacobian of a holomorphic map; exact for quadratic maps up to rounding.
CMat holomorphic_jacobian(const ReducedMap& w, const CVec& a, double h = 1e-3);

struct OnlineOptions {
  // Divide the H-coupled nonlinear sum by N_omega, matching the forcing sum of the constant term.
  bool mean_coupled_sum = true;
};

// Evaluates the SSOP algebraic system for a fixed operator set. Not thread-safe: holds workspace.
class OnlineModel {
 public:
  explicit OnlineModel(const RomOperators& ops, OnlineOptions options = {});

  const RomOperators& operators() const { return *ops_; }
  int size() const { return ops_->layout.total; }

  // forcing: sampled f(t_j), N_f x N_omega.
  CVec constant_term(const CMat& forcing, const CVec& q0) const;
  CVec constant_term_spectral(const CMat& forcing_hat, const CVec& q0_phi) const;
  // w(a) from the closure plus the exact shift term.
  void nonlinear_term(const CVec& a, CVec& w);
  // Closure parts before the H coupling, used by scaling tests.
  CMat sampled_nonlinearity_hat(const CVec& a);  // DEIM: p2 x N_omega
  CVec triadic_direct_sum(const CVec& a) const;  // triadic: sum n z per frequency

  SolveResult solve(const CMat& forcing, const CVec& q0, const SolveOptions& options);
  // Solve from an explicit constant term.
  SolveResult solve_constant(const CVec& c, const SolveOptions& options);

 private:
  void add_coupled(const CVec& v, CVec& w) const;

  const RomOperators* ops_;
  OnlineOptions options_;
  CMat m_all_;        // [M_0 .. M_{N-1}], p1 x (p2 N)
  CMat shift_m_all_;  // [shift_m_0 ..], p1 x total
  CMat feature_time_, features_;
  CVec kernel_out_;
};

// Decoded trajectory of a coefficient set.
CMat reconstruct(const CVec& a, const SpodBasis& basis);

}  // namespace ssop
