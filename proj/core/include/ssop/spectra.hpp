#pragma once

#include <vector>

#include "ssop/common.hpp"

namespace ssop {

// Column k is q_hat_k = sum_j q_j e^{-i omega_k t_j}.
CMat dft_block(const CMat& traj);
// Column j is (1/N) sum_k q_hat_k e^{i omega_k t_j}.
CMat idft_block(const CMat& spectral);

// Per-frequency realization matrices Q_hat_k (N_x x N_d).
struct SpectralStack {
  FrequencyGrid grid;
  std::vector<CMat> blocks;

  int n_blocks() const { return blocks.empty() ? 0 : static_cast<int>(blocks.front().cols()); }
  int n_x() const { return blocks.empty() ? 0 : static_cast<int>(blocks.front().rows()); }
};

int welch_block_count(int n_snapshots, int n_omega, double overlap);
SpectralStack welch_blocks(const CMat& snapshots, const FrequencyGrid& grid, double overlap);

// Offsets of the per-frequency segments in a flat coefficient vector.
struct CoefficientLayout {
  std::vector<int> counts;
  std::vector<int> offsets;
  int total = 0;

  explicit CoefficientLayout(std::vector<int> per_frequency = {});
  int size(int k) const { return counts[static_cast<std::size_t>(k)]; }
  int offset(int k) const { return offsets[static_cast<std::size_t>(k)]; }
};

struct SpodBasis {
  FrequencyGrid grid;
  RVec weights;
  std::vector<CMat> modes_full;  // Psi_k^{N_d}
  std::vector<RVec> energies;    // descending per frequency
  std::vector<int> retained;     // r_k
  double r_avg = 0.0;

  int n_omega() const { return grid.n_omega; }
  int n_x() const { return static_cast<int>(weights.size()); }
  int r(int k) const { return retained[static_cast<std::size_t>(k)]; }
  auto modes(int k) const { return modes_full[static_cast<std::size_t>(k)].leftCols(r(k)); }
  CoefficientLayout layout() const { return CoefficientLayout(retained); }
  // Reselects r_k for a new average without recomputing modes.
  void reallocate(double new_r_avg);
};

// Global sort with ties broken by lower frequency index, then lower mode index.
std::vector<int> allocate_modes(const std::vector<RVec>& energies, double r_avg);

SpodBasis compute_spod(const SpectralStack& stack, const RVec& weights, double r_avg);

// a_k = Psi_k^* W q_hat_k, concatenated over k.
CVec encode(const CMat& traj, const SpodBasis& basis);
CVec encode_spectral(const CMat& spectral, const SpodBasis& basis);
CMat decode(const CVec& coeffs, const SpodBasis& basis);
CMat decode_spectral(const CVec& coeffs, const SpodBasis& basis);

struct PodBasis {
  CMat modes;      // N_x x p, W-orthonormal
  RVec energies;   // sigma^2 / n_snapshots, descending
  RVec weights;
};

PodBasis compute_pod(const CMat& snapshots, const RVec& weights, int n_modes);

CMat reconstruct_pod(const CMat& traj, const CMat& phi, const RVec& weights);
CMat reconstruct_spod(const CMat& traj, const SpodBasis& basis);

// ||q - q_rec||^2_{x,t} / ||q||^2_{x,t}
double projection_error(const CMat& traj, const SpodBasis& basis);
double projection_error(const CMat& traj, const CMat& phi, const RVec& weights);

// ||q||^2_{x,t} = sum_j ||q_j||_W^2
double space_time_norm2(const CMat& traj, const RVec& weights);

}  // namespace ssop
