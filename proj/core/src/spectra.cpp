#include "ssop/spectra.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <tuple>

#include <Eigen/SVD>

#include "ssop/fft.hpp"

namespace ssop {

CMat dft_block(const CMat& traj) { return fft::forward(traj); }

CMat idft_block(const CMat& spectral) { return fft::inverse(spectral); }

int welch_block_count(int n_snapshots, int n_omega, double overlap) {
  if (n_omega <= 0) throw InvalidArgument("n_omega must be positive");
  if (!(overlap >= 0.0 && overlap < 1.0)) throw InvalidArgument("overlap must lie in [0, 1)");
  if (n_snapshots < n_omega) {
    std::ostringstream os;
    os << "welch blocking needs at least " << n_omega << " snapshots, got " << n_snapshots;
    throw InvalidArgument(os.str());
  }
  const int step = std::max(1, static_cast<int>(std::lround(n_omega * (1.0 - overlap))));
  return (n_snapshots - n_omega) / step + 1;
}

SpectralStack welch_blocks(const CMat& snapshots, const FrequencyGrid& grid, double overlap) {
  const int n = static_cast<int>(snapshots.cols());
  const int nd = welch_block_count(n, grid.n_omega, overlap);
  const int step = std::max(1, static_cast<int>(std::lround(grid.n_omega * (1.0 - overlap))));
  SpectralStack stack;
  stack.grid = grid;
  stack.blocks.assign(static_cast<std::size_t>(grid.n_omega), CMat(snapshots.rows(), nd));
  for (int d = 0; d < nd; ++d) {
    const CMat spec = dft_block(snapshots.middleCols(static_cast<Eigen::Index>(d) * step, grid.n_omega));
    for (int k = 0; k < grid.n_omega; ++k) stack.blocks[static_cast<std::size_t>(k)].col(d) = spec.col(k);
  }
  return stack;
}

CoefficientLayout::CoefficientLayout(std::vector<int> per_frequency) : counts(std::move(per_frequency)) {
  offsets.resize(counts.size());
  int acc = 0;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    offsets[k] = acc;
    acc += counts[k];
  }
  total = acc;
}

std::vector<int> allocate_modes(const std::vector<RVec>& energies, double r_avg) {
  const int n_omega = static_cast<int>(energies.size());
  std::size_t total_modes = 0;
  for (const auto& e : energies) total_modes += static_cast<std::size_t>(e.size());
  const auto budget = static_cast<std::size_t>(std::llround(r_avg * n_omega));
  if (budget > total_modes) throw InvalidArgument("r_avg * n_omega exceeds the available mode count");
  std::vector<std::tuple<double, int, int>> all;
  all.reserve(total_modes);
  for (int k = 0; k < n_omega; ++k) {
    const auto& e = energies[static_cast<std::size_t>(k)];
    for (int m = 0; m < e.size(); ++m) all.emplace_back(e[m], k, m);
  }
  std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) {
    if (std::get<0>(a) != std::get<0>(b)) return std::get<0>(a) > std::get<0>(b);
    if (std::get<1>(a) != std::get<1>(b)) return std::get<1>(a) < std::get<1>(b);
    return std::get<2>(a) < std::get<2>(b);
  });
  std::vector<int> counts(static_cast<std::size_t>(n_omega), 0);
  for (std::size_t i = 0; i < budget; ++i) ++counts[static_cast<std::size_t>(std::get<1>(all[i]))];
  return counts;
}

void SpodBasis::reallocate(double new_r_avg) {
  retained = allocate_modes(energies, new_r_avg);
  r_avg = new_r_avg;
}

SpodBasis compute_spod(const SpectralStack& stack, const RVec& weights, double r_avg) {
  const int n_omega = stack.grid.n_omega;
  if (static_cast<int>(stack.blocks.size()) != n_omega) throw InvalidArgument("stack size does not match grid");
  if (weights.size() != stack.n_x()) throw InvalidArgument("weight length does not match state size");
  if ((weights.array() <= 0.0).any()) throw InvalidArgument("weights must be positive");
  SpodBasis basis;
  basis.grid = stack.grid;
  basis.weights = weights;
  basis.modes_full.resize(static_cast<std::size_t>(n_omega));
  basis.energies.resize(static_cast<std::size_t>(n_omega));
  const RVec wsqrt = weights.cwiseSqrt();
  const RVec wisqrt = wsqrt.cwiseInverse();
  const double nd = stack.n_blocks();
  bool failed = false;
  int failed_k = -1;
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < n_omega; ++k) {
    const CMat m = (wsqrt.asDiagonal() * stack.blocks[static_cast<std::size_t>(k)]) / nd;
    Eigen::BDCSVD<CMat> svd(m, Eigen::ComputeThinU);
    if (svd.info() != Eigen::Success) {
#pragma omp critical
      {
        failed = true;
        failed_k = k;
      }
      continue;
    }
    basis.modes_full[static_cast<std::size_t>(k)] = wisqrt.asDiagonal() * svd.matrixU();
    basis.energies[static_cast<std::size_t>(k)] = svd.singularValues().array().square();
  }
  if (failed) throw NumericalError("SVD failed at frequency index " + std::to_string(failed_k));
  basis.reallocate(r_avg);
  return basis;
}

CVec encode_spectral(const CMat& spectral, const SpodBasis& basis) {
  if (spectral.rows() != basis.n_x() || spectral.cols() != basis.n_omega()) {
    throw InvalidArgument("trajectory shape does not match the basis");
  }
  const CoefficientLayout lay = basis.layout();
  CVec a(lay.total);
  const CMat wq = basis.weights.asDiagonal() * spectral;
  for (int k = 0; k < basis.n_omega(); ++k) {
    a.segment(lay.offset(k), lay.size(k)).noalias() = basis.modes(k).adjoint() * wq.col(k);
  }
  return a;
}

CVec encode(const CMat& traj, const SpodBasis& basis) { return encode_spectral(dft_block(traj), basis); }

CMat decode_spectral(const CVec& coeffs, const SpodBasis& basis) {
  const CoefficientLayout lay = basis.layout();
  if (coeffs.size() != lay.total) throw InvalidArgument("coefficient length does not match the basis");
  CMat spec(basis.n_x(), basis.n_omega());
  for (int k = 0; k < basis.n_omega(); ++k) {
    spec.col(k).noalias() = basis.modes(k) * coeffs.segment(lay.offset(k), lay.size(k));
  }
  return spec;
}

CMat decode(const CVec& coeffs, const SpodBasis& basis) { return idft_block(decode_spectral(coeffs, basis)); }

PodBasis compute_pod(const CMat& snapshots, const RVec& weights, int n_modes) {
  if (weights.size() != snapshots.rows()) throw InvalidArgument("weight length does not match state size");
  const RVec wsqrt = weights.cwiseSqrt();
  Eigen::BDCSVD<CMat> svd(wsqrt.asDiagonal() * snapshots, Eigen::ComputeThinU);
  if (svd.info() != Eigen::Success) throw NumericalError("POD SVD failed");
  const auto rank = static_cast<int>(svd.singularValues().size());
  if (n_modes > rank) {
    warn("POD: requested " + std::to_string(n_modes) + " modes, rank allows " + std::to_string(rank));
    n_modes = rank;
  }
  PodBasis pod;
  pod.weights = weights;
  pod.modes = wsqrt.cwiseInverse().asDiagonal() * svd.matrixU().leftCols(n_modes);
  pod.energies = svd.singularValues().array().square() / static_cast<double>(snapshots.cols());
  return pod;
}

CMat reconstruct_pod(const CMat& traj, const CMat& phi, const RVec& weights) {
  return phi * winner(phi, weights, traj);
}

CMat reconstruct_spod(const CMat& traj, const SpodBasis& basis) { return decode(encode(traj, basis), basis); }

double space_time_norm2(const CMat& traj, const RVec& weights) { return wnorm2_cols(traj, weights); }

double projection_error(const CMat& traj, const SpodBasis& basis) {
  return space_time_norm2(traj - reconstruct_spod(traj, basis), basis.weights) /
         space_time_norm2(traj, basis.weights);
}

double projection_error(const CMat& traj, const CMat& phi, const RVec& weights) {
  return space_time_norm2(traj - reconstruct_pod(traj, phi, weights), weights) /
         space_time_norm2(traj, weights);
}

}  // namespace ssop
