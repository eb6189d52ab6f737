#pragma once

#include <optional>
#include <vector>

#include "ssop/fom.hpp"
#include "ssop/spectra.hpp"

namespace ssop {

// Tikhonov-filtered least squares for M x ~ y with M = U diag(s) V^*.
struct LsqFactor {
  CMat u, v;
  RVec filter;             // s / (s^2 + lambda)
  double condition = 1.0;  // of the gram M^*M
  bool regularized = false;

  CMat solve(const CMat& projected) const { return v * (filter.asDiagonal() * (u.adjoint() * projected)); }
};

// Factorizes M, adding lambda = 1e-12 trace(M^*M)/cols when the gram condition exceeds 1e12.
LsqFactor factor_least_squares(const CMat& m);

// R_k ~ Q_k G_k^+ with G_k = (i omega_k I - A) Q_k.
class ResolventSurrogate {
 public:
  ResolventSurrogate(const SpectralStack& stack, const CMat& a, const RVec& weights);

  int n_omega() const { return static_cast<int>(g_.size()); }
  const CMat& g(int k) const { return g_[static_cast<std::size_t>(k)]; }
  const CMat& q(int k) const { return stack_->blocks[static_cast<std::size_t>(k)]; }
  const LsqFactor& factor(int k) const { return factors_[static_cast<std::size_t>(k)]; }
  const RVec& weights() const { return weights_; }

  // Coordinates x = argmin ||G x - v||_W (regularized) so that R_k v ~ Q_k x.
  CMat coordinates(int k, const CMat& v) const;
  CMat apply(int k, const CMat& v) const;
  int regularized_count() const;

 private:
  const SpectralStack* stack_;
  RVec weights_;
  std::vector<CMat> g_;
  std::vector<LsqFactor> factors_;
};

struct DeimBasis {
  CMat u;                    // U^n, N_x x p2
  std::vector<int> samples;  // interpolation indices
  CMat ud;                   // U (P^T U)^{-1}
  double condition = 1.0;    // of P^T U
};

// Standard DEIM: POD of the snapshots, then greedy argmax point selection.
DeimBasis deim(const CMat& snapshots, int p2);
// U (P^T U)^{-1} P^T v
CVec deim_approximate(const DeimBasis& basis, const CVec& v);

// Symmetric bilinear form of an exactly quadratic nonlinearity by polarization.
CVec symmetric_bilinear(const Nonlinearity& n, const CVec& q1, const CVec& q2);

struct DeimOperators {
  int p2 = 0;
  std::vector<int> samples;
  std::vector<CMat> n;                  // r_k x p2
  std::vector<CMat> m;                  // p1 x p2
  std::vector<std::vector<CMat>> s;     // [feature][k]: p2 x r_k
};

// Retained triads for output frequency k stored contiguously.
struct TriadicBlock {
  std::vector<int> first;   // flat coefficient index of a_{lm}
  std::vector<int> second;  // flat coefficient index of a_{in}
  CMat n;                   // r_k x count
  CMat m;                   // p1 x count
};

struct TriadicTable {
  double epsilon = 0.0;
  long long candidates = 0;
  long long retained = 0;
  std::vector<TriadicBlock> blocks;
  // Impact map T_kl: sum over mode pairs of ||N_omega n_klmn||^2 lambda_lm lambda_in,
  // the same proxy compared against epsilon.
  RMat impact;

  double retained_fraction() const { return candidates > 0 ? double(retained) / double(candidates) : 0.0; }
};

enum class ClosureKind { None, Deim, Triadic };
enum class HMode { Galerkin, Runs };

std::string to_string(ClosureKind kind);
ClosureKind closure_from_string(const std::string& name);
std::string to_string(HMode mode);
HMode h_mode_from_string(const std::string& name);

struct RomOperators {
  FrequencyGrid grid;
  CoefficientLayout layout;
  RVec weights;
  CMat phi;  // intermediary basis, N_x x p1
  int n_inputs = 0;
  double shift = 0.0;
  HMode h_mode = HMode::Galerkin;

  std::vector<CMat> e;  // r_k x N_f
  std::vector<CMat> j;  // p1 x N_f
  std::vector<CMat> h;  // r_k x p1
  // Exact treatment of the shift term shift * q inside the nonlinearity.
  std::vector<CMat> shift_n;  // r_k x r_k
  std::vector<CMat> shift_m;  // p1 x r_k

  ClosureKind closure = ClosureKind::None;
  std::optional<DeimOperators> deim;
  std::optional<TriadicTable> triadic;
  Nonlinearity nonlinearity;  // pointwise kernel used by the DEIM path

  int p1() const { return static_cast<int>(phi.cols()); }
  int n_omega() const { return grid.n_omega; }
};

struct OfflineOptions {
  int p1 = 30;
  int p2 = 30;
  ClosureKind closure = ClosureKind::Deim;
  double epsilon = 0.0;
  HMode h_mode = HMode::Galerkin;
  OdeOptions ode;  // used by HMode::Runs
  // Keep the unthresholded impact map when building triadic tables.
  bool record_impact = true;
};

// H_k = P_k (I - e^{(At - i w_k)dt})^{-1} (I - e^{At T}) Psi^{N_d*} W Phi
CMat transient_operator(const CMat& a_tilde, const CMat& psi_w_phi, double omega, const FrequencyGrid& grid,
                        int r_k);
// (I - e^{(A - i w)dt})^{-1} (I - e^{A T}) by dense exponentials.
CMat geometric_sum_operator(const CMat& a, double omega, const FrequencyGrid& grid);
// Columns Psi_k^* W DFT_k[e^{A t_J} phi_l] from linear unforced runs.
std::vector<CMat> transient_from_runs(const CMat& a, const CMat& phi, const SpodBasis& basis,
                                      const OdeOptions& ode);

// Training data needed offline beyond the spectral stack.
struct TrainingData {
  SpectralStack stack;
  CMat snapshots;  // states used for POD and nonlinearity snapshots
};

struct OfflineReport {
  int regularized_frequencies = 0;
  double max_gram_condition = 0.0;
  double deim_condition = 0.0;
  double seconds = 0.0;
};

RomOperators build_operators(const System& sys, const SpodBasis& basis, const TrainingData& data,
                             const OfflineOptions& options, OfflineReport* report = nullptr);

// Sampled nonlinearity snapshots n(q_j) used to train the DEIM basis.
CMat nonlinearity_snapshots(const Nonlinearity& n, const CMat& states);

// Parameter-independent pieces for fast reassembly at new mu.
class AffineBundle {
 public:
  AffineBundle(const System& sys, const SpodBasis& basis, const TrainingData& data,
               const RomOperators& reference, const OfflineOptions& options);

  // Operators at mu with stabilizing shift `shift`; no O(N_x) work.
  RomOperators assemble(const std::vector<double>& mu, double shift) const;
  // Gram G^*WG at frequency k from the compressed blocks.
  CMat gram(int k, const std::vector<double>& mu, double shift) const;
  std::size_t bytes() const;

 private:
  std::vector<cd> thetas(int k, const std::vector<double>& mu, double shift) const;
  CMat compressed(int k, const std::vector<double>& mu, double shift) const;

  const AffineOperator* op_;
  RomOperators skeleton_;
  int n_terms_ = 0;  // affine terms plus the identity term
  // W^{1/2} [G_0 .. G_M] = Z [R_0 .. R_M] with Z orthonormal; right-hand sides are stored as Z^* W^{1/2} v.
  std::vector<std::vector<CMat>> r_;  // [k][term]
  std::vector<CMat> zb_, zu_, zpsi_, zbil_;
  std::vector<std::vector<CMat>> a_tilde_;  // [k][affine term]
  std::vector<CMat> left_psi_, left_phi_, psi_w_phi_;
};

}  // namespace ssop
