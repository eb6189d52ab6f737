#pragma once

#include <optional>

#include "ssop/offline.hpp"

namespace ssop {

enum class PodClosure { Direct, Deim };

std::string to_string(PodClosure closure);
PodClosure pod_closure_from_string(const std::string& name);

struct PodGalerkinRom {
  CMat phi;     // N_x x r, W-orthonormal
  RVec weights;
  CMat a;       // Phi^* W A Phi
  CMat b;       // Phi^* W B
  Nonlinearity nonlinearity;
  PodClosure closure = PodClosure::Direct;
  // DEIM variant: n(Phi a) ~ proj * g(sampled features).
  std::vector<int> samples;
  CMat proj;                      // Phi^* W U_d, r x p2
  std::vector<CMat> sampled_maps;  // [feature]: p2 x r

  int r() const { return static_cast<int>(phi.cols()); }
};

// Galerkin projection onto the leading r POD modes of the snapshots (unshifted operator).
PodGalerkinRom build_pod_galerkin(const System& sys, const CMat& snapshots, int r,
                                  PodClosure closure = PodClosure::Direct, int p2 = 0);

// Reduced right-hand side without forcing.
void pod_galerkin_rhs(const PodGalerkinRom& rom, const CVec& a, CVec& da);

// Integrates the ROM and lifts: states Phi a(t_j), j = 0..n_steps-1.
CMat integrate_rom(const PodGalerkinRom& rom, const CVec& q0, const CMat& forcing, int n_steps, double dt,
                   const OdeOptions& ode = {}, OdeStats* stats = nullptr,
                   ForcingInterpolation interpolation = ForcingInterpolation::Trigonometric);
// Reduced coefficients only (r x n_steps); the timed part of the baseline.
CMat integrate_rom_coefficients(const PodGalerkinRom& rom, const CVec& a0, const CMat& forcing, int n_steps,
                                double dt, const OdeOptions& ode = {}, OdeStats* stats = nullptr,
                                ForcingInterpolation interpolation = ForcingInterpolation::Trigonometric);

// e_j = ||q_j - q~_j||^2_W / normalizer; the time average of e_j is the trajectory error.
RVec error_series(const CMat& reference, const CMat& approx, const RVec& weights, double normalizer);
// Mean of ||q_j||^2_W over time steps and trajectories.
double mean_square_norm(const std::vector<CMat>& trajectories, const RVec& weights);

}  // namespace ssop
