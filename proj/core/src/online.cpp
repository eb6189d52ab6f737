#include "ssop/online.hpp"

#include <chrono>
#include <memory>
#include <cmath>
#include <sstream>

#include "ssop/fft.hpp"

namespace ssop {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Wraps a reduced map with timing and call counting.
ReducedMap timed(const ReducedMap& w, SolveReport& report) {
  return [&w, &report](const CVec& a, CVec& out) {
    const auto t0 = Clock::now();
    w(a, out);
    report.nonlinear_seconds += seconds_since(t0);
    ++report.nonlinear_evaluations;
  };
}

void record(SolveReport& report, double value) {
  if (!report.residual_history.empty() && value > report.residual_history.back()) report.monotone = false;
  report.residual_history.push_back(value);
}

}  // namespace

std::string to_string(SolverKind kind) {
  switch (kind) {
    case SolverKind::Auto: return "auto";
    case SolverKind::FixedPoint: return "fixed";
    case SolverKind::PseudoTime: return "pseudo";
  }
  return "auto";
}

SolverKind solver_from_string(const std::string& name) {
  if (name == "auto") return SolverKind::Auto;
  if (name == "fixed" || name == "fixed-point") return SolverKind::FixedPoint;
  if (name == "pseudo" || name == "pseudo-time") return SolverKind::PseudoTime;
  throw InvalidArgument("method must be auto, fixed or pseudo");
}

void to_json(nlohmann::json& j, const SolveReport& r) {
  j = nlohmann::json{{"method", to_string(r.method)},
                     {"converged", r.converged},
                     {"diverged", r.diverged},
                     {"iterations", r.iterations},
                     {"residual_history", r.residual_history},
                     {"monotone", r.monotone},
                     {"nonlinear_evaluations", r.nonlinear_evaluations},
                     {"wall_time", {{"constant_term", r.constant_seconds},
                                    {"nonlinear", r.nonlinear_seconds},
                                    {"total", r.total_seconds}}},
                     {"message", r.message}};
}

SolveResult fixed_point_solve(const CVec& c, const ReducedMap& w, const SolveOptions& options) {
  const auto t0 = Clock::now();
  SolveResult res;
  SolveReport& rep = res.report;
  rep.method = SolverKind::FixedPoint;
  const ReducedMap map = timed(w, rep);
  const double c_norm = c.norm();
  // a^1 = c is the linear solution; each further iterate costs one map evaluation.
  res.a = c;
  if (c_norm == 0.0) {
    rep.converged = true;
    rep.total_seconds = seconds_since(t0);
    return res;
  }
  CVec wa(c.size()), next(c.size());
  double last_update = std::numeric_limits<double>::infinity();
  int growing = 0;
  for (int it = 1; it <= options.max_iterations; ++it) {
    map(res.a, wa);
    next = c + wa;
    if (options.hook) options.hook(it, res.a, next);
    const double update = (next - res.a).norm();
    const double prev_norm = res.a.norm();
    const double rel = prev_norm > 0 ? update / prev_norm : update;
    rep.iterations = it;
    record(rep, rel);
    if (!next.allFinite()) {
      rep.diverged = true;
      rep.message = "fixed point produced non-finite iterate";
      break;
    }
    growing = update > last_update ? growing + 1 : 0;
    last_update = update;
    res.a.swap(next);
    if (rel <= options.tol) {
      rep.converged = true;
      break;
    }
    if (growing >= 3 && update > 1e3 * c_norm) {
      rep.diverged = true;
      rep.message = "fixed point diverged: update grew 3 consecutive iterations past 1e3 |c|";
      break;
    }
  }
  if (!rep.converged && rep.message.empty()) {
    rep.message = "fixed point reached max_iterations = " + std::to_string(options.max_iterations);
  }
  rep.total_seconds = seconds_since(t0);
  return res;
}

SolveResult pseudo_time_solve(const CVec& c, const ReducedMap& w, const SolveOptions& options) {
  const auto t0 = Clock::now();
  SolveResult res;
  SolveReport& rep = res.report;
  rep.method = SolverKind::PseudoTime;
  const ReducedMap map = timed(w, rep);
  CVec wa(c.size());
  const OdeRhs rhs = [&](double, const CVec& a, CVec& da) {
    map(a, wa);
    da = c + wa - a;
  };
  res.a = c;
  if (c.norm() == 0.0) {
    rep.converged = true;
    rep.total_seconds = seconds_since(t0);
    return res;
  }
  try {
    // Near the steady state the step controller parks at the stability boundary, where the
    // residual stalls at roughly rtol; tightening the tolerances resumes the decay.
    OdeOptions ode = options.pseudo_ode;
    auto dp = std::make_unique<DormandPrince>(rhs, ode);
    dp->reset(0.0, c);
    const auto residual = [&dp]() {
      const double an = dp->y().norm();
      return an > 0 ? dp->dydt().norm() / an : dp->dydt().norm();
    };
    double r = residual();
    record(rep, r);
    double best = r;
    int stalled = 0;
    while (r > options.tol && rep.iterations < options.max_pseudo_steps) {
      dp->step();
      ++rep.iterations;
      r = residual();
      record(rep, r);
      if (!std::isfinite(r)) break;
      if (r < 0.5 * best) {
        best = r;
        stalled = 0;
      } else if (++stalled >= 50 && ode.rtol > 1e-14) {
        ode.rtol *= 1e-2;
        ode.atol *= 1e-2;
        const CVec y = dp->y();
        const double t = dp->t();
        dp = std::make_unique<DormandPrince>(rhs, ode);
        dp->reset(t, y);
        best = r = residual();
        stalled = 0;
      }
    }
    res.a = dp->y();
    rep.converged = r <= options.tol;
    if (!rep.converged) {
      std::ostringstream os;
      os << "pseudo-time stopped after " << rep.iterations << " steps with residual " << r;
      rep.message = os.str();
    }
  } catch (const IntegrationFailure& e) {
    rep.converged = false;
    rep.message = std::string("pseudo-time integration failed: ") + e.what();
  }
  rep.total_seconds = seconds_since(t0);
  return res;
}

SolveResult solve_reduced(const CVec& c, const ReducedMap& w, const SolveOptions& options) {
  switch (options.solver) {
    case SolverKind::FixedPoint: return fixed_point_solve(c, w, options);
    case SolverKind::PseudoTime: return pseudo_time_solve(c, w, options);
    case SolverKind::Auto: break;
  }
  SolveResult fp = fixed_point_solve(c, w, options);
  if (fp.report.converged) return fp;
  SolveResult pt = pseudo_time_solve(c, w, options);
  pt.report.nonlinear_seconds += fp.report.nonlinear_seconds;
  pt.report.nonlinear_evaluations += fp.report.nonlinear_evaluations;
  pt.report.total_seconds += fp.report.total_seconds;
  pt.report.message = pt.report.converged ? "fell back after: " + fp.report.message
                                          : "both solvers failed; " + fp.report.message + "; " + pt.report.message;
  return pt;
}

CMat holomorphic_jacobian(const ReducedMap& w, const CVec& a, double h) {
  const Eigen::Index n = a.size();
  CMat jac(n, n);
  CVec wp(n), wm(n), e = CVec::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    e[i] = h;
    w(a + e, wp);
    w(a - e, wm);
    jac.col(i) = (wp - wm) / (2.0 * h);
    e[i] = 0.0;
  }
  return jac;
}

OnlineModel::OnlineModel(const RomOperators& ops, OnlineOptions options) : ops_(&ops), options_(options) {
  const int n = ops.n_omega();
  if (ops.deim && ops.deim->p2 > 0) {
    const int p2 = ops.deim->p2;
    m_all_.resize(ops.p1(), static_cast<Eigen::Index>(p2) * n);
    for (int k = 0; k < n; ++k) m_all_.middleCols(static_cast<Eigen::Index>(k) * p2, p2) = ops.deim->m[static_cast<std::size_t>(k)];
    feature_time_.resize(p2, n);
    features_.resize(static_cast<Eigen::Index>(p2) * n, ops.nonlinearity.n_features());
  }
  if (ops.shift != 0.0) {
    shift_m_all_.resize(ops.p1(), ops.layout.total);
    for (int k = 0; k < n; ++k) {
      shift_m_all_.middleCols(ops.layout.offset(k), ops.layout.size(k)) = ops.shift_m[static_cast<std::size_t>(k)];
    }
  }
}

CVec OnlineModel::constant_term(const CMat& forcing, const CVec& q0) const {
  const RomOperators& ops = *ops_;
  if (forcing.cols() != ops.n_omega()) throw InvalidArgument("forcing length must equal N_omega");
  if (forcing.rows() != ops.n_inputs) throw InvalidArgument("forcing rows must equal the number of inputs");
  if (q0.size() != ops.weights.size()) throw InvalidArgument("initial condition has the wrong size");
  return constant_term_spectral(fft::forward(forcing), winner(ops.phi, ops.weights, q0));
}

CVec OnlineModel::constant_term_spectral(const CMat& fhat, const CVec& q0_phi) const {
  const RomOperators& ops = *ops_;
  const int n = ops.n_omega();
  CVec mean = CVec::Zero(ops.p1());
  for (int l = 0; l < n; ++l) mean.noalias() += ops.j[static_cast<std::size_t>(l)] * fhat.col(l);
  const CVec v = q0_phi - mean / static_cast<double>(n);
  CVec c(ops.layout.total);
  for (int k = 0; k < n; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    auto seg = c.segment(ops.layout.offset(k), ops.layout.size(k));
    seg.noalias() = ops.e[kk] * fhat.col(k);
    seg.noalias() += ops.h[kk] * v;
  }
  return c;
}

CMat OnlineModel::sampled_nonlinearity_hat(const CVec& a) {
  const RomOperators& ops = *ops_;
  const DeimOperators& d = *ops.deim;
  const int n = ops.n_omega();
  const int p2 = d.p2;
  const int nf = ops.nonlinearity.n_features();
  for (int f = 0; f < nf; ++f) {
    const auto& s = d.s[static_cast<std::size_t>(f)];
    for (int k = 0; k < n; ++k) {
      feature_time_.col(k).noalias() = s[static_cast<std::size_t>(k)] * a.segment(ops.layout.offset(k), ops.layout.size(k));
    }
    fft::transform(feature_time_.data(), n, p2, p2, 1, +1);
    features_.col(f) = feature_time_.reshaped() / static_cast<double>(n);
  }
  ops.nonlinearity.pointwise(features_, kernel_out_);
  CMat nhat = kernel_out_.reshaped(p2, n);
  fft::transform(nhat.data(), n, p2, p2, 1, -1);
  return nhat;
}

CVec OnlineModel::triadic_direct_sum(const CVec& a) const {
  const RomOperators& ops = *ops_;
  CVec w = CVec::Zero(ops.layout.total);
  for (int k = 0; k < ops.n_omega(); ++k) {
    const TriadicBlock& b = ops.triadic->blocks[static_cast<std::size_t>(k)];
    CVec z(static_cast<Eigen::Index>(b.first.size()));
    for (std::size_t e = 0; e < b.first.size(); ++e) z[static_cast<Eigen::Index>(e)] = a[b.first[e]] * a[b.second[e]];
    w.segment(ops.layout.offset(k), ops.layout.size(k)).noalias() = b.n * z;
  }
  return w;
}

void OnlineModel::add_coupled(const CVec& v, CVec& w) const {
  const RomOperators& ops = *ops_;
  for (int k = 0; k < ops.n_omega(); ++k) {
    w.segment(ops.layout.offset(k), ops.layout.size(k)).noalias() -= ops.h[static_cast<std::size_t>(k)] * v;
  }
}

void OnlineModel::nonlinear_term(const CVec& a, CVec& w) {
  const RomOperators& ops = *ops_;
  const int n = ops.n_omega();
  if (a.size() != ops.layout.total) throw InvalidArgument("coefficient length does not match the operators");
  w.setZero(ops.layout.total);
  CVec v = CVec::Zero(ops.p1());
  bool coupled = false;
  if (ops.closure == ClosureKind::Deim && ops.deim && ops.deim->p2 > 0) {
    const CMat nhat = sampled_nonlinearity_hat(a);
    for (int k = 0; k < n; ++k) {
      w.segment(ops.layout.offset(k), ops.layout.size(k)).noalias() += ops.deim->n[static_cast<std::size_t>(k)] * nhat.col(k);
    }
    v.noalias() += m_all_ * nhat.reshaped();
    coupled = true;
  } else if (ops.closure == ClosureKind::Triadic && ops.triadic) {
    CVec z;
    for (int k = 0; k < n; ++k) {
      const TriadicBlock& b = ops.triadic->blocks[static_cast<std::size_t>(k)];
      if (b.first.empty()) continue;
      z.resize(static_cast<Eigen::Index>(b.first.size()));
      for (std::size_t e = 0; e < b.first.size(); ++e) z[static_cast<Eigen::Index>(e)] = a[b.first[e]] * a[b.second[e]];
      w.segment(ops.layout.offset(k), ops.layout.size(k)).noalias() += b.n * z;
      v.noalias() += b.m * z;
    }
    coupled = true;
  }
  if (ops.shift != 0.0) {
    for (int k = 0; k < n; ++k) {
      w.segment(ops.layout.offset(k), ops.layout.size(k)).noalias() +=
          ops.shift_n[static_cast<std::size_t>(k)] * a.segment(ops.layout.offset(k), ops.layout.size(k));
    }
    v.noalias() += shift_m_all_ * a;
    coupled = true;
  }
  if (!coupled) return;
  if (options_.mean_coupled_sum) v /= static_cast<double>(n);
  add_coupled(v, w);
}

SolveResult OnlineModel::solve_constant(const CVec& c, const SolveOptions& options) {
  const ReducedMap map = [this](const CVec& a, CVec& w) { nonlinear_term(a, w); };
  const bool linear = ops_->closure == ClosureKind::None && ops_->shift == 0.0;
  if (linear) {
    SolveResult res;
    res.a = c;
    res.report.method = options.solver == SolverKind::PseudoTime ? SolverKind::PseudoTime : SolverKind::FixedPoint;
    res.report.converged = true;
    res.report.iterations = c.norm() > 0 ? 1 : 0;
    return res;
  }
  return solve_reduced(c, map, options);
}

SolveResult OnlineModel::solve(const CMat& forcing, const CVec& q0, const SolveOptions& options) {
  const auto t0 = Clock::now();
  const CVec c = constant_term(forcing, q0);
  const double tc = seconds_since(t0);
  SolveResult res = solve_constant(c, options);
  res.report.constant_seconds = tc;
  res.report.total_seconds = seconds_since(t0);
  return res;
}

CMat reconstruct(const CVec& a, const SpodBasis& basis) { return decode(a, basis); }

}  // namespace ssop
