#include "ssop/baselines.hpp"

namespace ssop {

std::string to_string(PodClosure closure) { return closure == PodClosure::Deim ? "deim" : "direct"; }

PodClosure pod_closure_from_string(const std::string& name) {
  if (name == "direct") return PodClosure::Direct;
  if (name == "deim") return PodClosure::Deim;
  throw InvalidArgument("unknown POD closure '" + name + "'");
}

PodGalerkinRom build_pod_galerkin(const System& sys, const CMat& snapshots, int r, PodClosure closure, int p2) {
  if (r <= 0) throw InvalidArgument("POD-Galerkin needs r >= 1");
  if (closure == PodClosure::Deim && !sys.nonlinearity.empty() && p2 <= 0) {
    throw InvalidArgument("POD-Galerkin DEIM needs p2 >= 1");
  }
  PodGalerkinRom rom;
  rom.phi = compute_pod(snapshots, sys.weights, r).modes;
  rom.weights = sys.weights;
  rom.a = winner(rom.phi, sys.weights, sys.unshifted_operator() * rom.phi);
  rom.b = winner(rom.phi, sys.weights, sys.b);
  rom.nonlinearity = sys.nonlinearity;
  rom.closure = closure;
  if (closure == PodClosure::Deim && !sys.nonlinearity.empty()) {
    const DeimBasis d = deim(nonlinearity_snapshots(sys.nonlinearity, snapshots), p2);
    rom.samples = d.samples;
    rom.proj = winner(rom.phi, sys.weights, d.ud);
    const int nf = sys.nonlinearity.n_features();
    for (int f = 0; f < nf; ++f) {
      const CMat mapped = f == 0 ? rom.phi : CMat(sys.nonlinearity.feature_map(f) * rom.phi);
      CMat s(static_cast<Eigen::Index>(d.samples.size()), rom.r());
      for (std::size_t i = 0; i < d.samples.size(); ++i) s.row(static_cast<Eigen::Index>(i)) = mapped.row(d.samples[i]);
      rom.sampled_maps.push_back(std::move(s));
    }
  }
  return rom;
}

void pod_galerkin_rhs(const PodGalerkinRom& rom, const CVec& a, CVec& da) {
  da.noalias() = rom.a * a;
  if (rom.nonlinearity.empty()) return;
  if (rom.closure == PodClosure::Deim) {
    if (rom.samples.empty()) return;
    CMat feats(static_cast<Eigen::Index>(rom.samples.size()), static_cast<Eigen::Index>(rom.sampled_maps.size()));
    for (std::size_t f = 0; f < rom.sampled_maps.size(); ++f) feats.col(static_cast<Eigen::Index>(f)).noalias() = rom.sampled_maps[f] * a;
    CVec g;
    rom.nonlinearity.pointwise(feats, g);
    da.noalias() += rom.proj * g;
    return;
  }
  const CVec q = rom.phi * a;
  const CVec n = rom.nonlinearity(q);
  da.noalias() += rom.phi.adjoint() * rom.weights.asDiagonal() * n;
}

CMat integrate_rom_coefficients(const PodGalerkinRom& rom, const CVec& a0, const CMat& forcing, int n_steps,
                                double dt, const OdeOptions& ode, OdeStats* stats,
                                ForcingInterpolation interpolation) {
  if (forcing.cols() > 0 && forcing.rows() != rom.b.cols()) throw InvalidArgument("forcing rows must match inputs");
  const ForcingSeries series = forcing.cols() > 0 ? ForcingSeries(rom.b, forcing, dt, interpolation) : ForcingSeries();
  const OdeRhs rhs = [&](double t, const CVec& a, CVec& da) {
    pod_galerkin_rhs(rom, a, da);
    if (!series.empty()) series.add_to(t, da);
  };
  std::vector<double> times(static_cast<std::size_t>(n_steps));
  for (int j = 0; j < n_steps; ++j) times[static_cast<std::size_t>(j)] = j * dt;
  return integrate_dense(rhs, a0, times, ode, stats);
}

CMat integrate_rom(const PodGalerkinRom& rom, const CVec& q0, const CMat& forcing, int n_steps, double dt,
                   const OdeOptions& ode, OdeStats* stats, ForcingInterpolation interpolation) {
  const CVec a0 = winner(rom.phi, rom.weights, q0);
  return rom.phi * integrate_rom_coefficients(rom, a0, forcing, n_steps, dt, ode, stats, interpolation);
}

RVec error_series(const CMat& reference, const CMat& approx, const RVec& weights, double normalizer) {
  if (reference.rows() != approx.rows() || reference.cols() != approx.cols()) {
    throw InvalidArgument("trajectories differ in shape");
  }
  if (!(normalizer > 0)) throw InvalidArgument("error normalizer must be positive");
  const CMat diff = reference - approx;
  RVec e(diff.cols());
  for (Eigen::Index j = 0; j < diff.cols(); ++j) e[j] = wnorm2(diff.col(j), weights) / normalizer;
  return e;
}

double mean_square_norm(const std::vector<CMat>& trajectories, const RVec& weights) {
  double total = 0.0;
  long count = 0;
  for (const auto& t : trajectories) {
    total += wnorm2_cols(t, weights);
    count += t.cols();
  }
  if (count == 0) throw InvalidArgument("no trajectories");
  return total / static_cast<double>(count);
}

}  // namespace ssop
