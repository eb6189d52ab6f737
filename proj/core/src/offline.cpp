#include "ssop/offline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <unsupported/Eigen/MatrixFunctions>

#include "ssop/fft.hpp"

namespace ssop {

namespace {

constexpr double kGramConditionLimit = 1e12;

// Right-hand sides at one frequency in the coordinates of the factored matrix.
struct Pieces {
  CMat pb;    // B
  CMat pu;    // U_d
  CMat ppsi;  // Psi_k
  CMat a_tilde;
};

struct LeftFactors {
  CMat psi;        // Psi_k^* W Q_k
  CMat phi;        // Phi^* W Q_k
  CMat psi_w_phi;  // Psi_k^{N_d*} W Phi
};

CMat hstack(std::initializer_list<const CMat*> parts) {
  Eigen::Index rows = 0, cols = 0;
  for (const CMat* p : parts) {
    if (p->size() == 0 && p->cols() == 0) continue;
    rows = p->rows();
    cols += p->cols();
  }
  CMat out(rows, cols);
  Eigen::Index c = 0;
  for (const CMat* p : parts) {
    if (p->cols() == 0) continue;
    out.middleCols(c, p->cols()) = *p;
    c += p->cols();
  }
  return out;
}

CMat matrix_power(CMat base, int n) {
  CMat result = CMat::Identity(base.rows(), base.cols());
  while (n > 0) {
    if (n & 1) result = result * base;
    n >>= 1;
    if (n > 0) base = base * base;
  }
  return result;
}

void check_resolvent_exists(const CMat& a, const FrequencyGrid& grid) {
  Eigen::ComplexEigenSolver<CMat> es(a, false);
  if (es.info() != Eigen::Success) throw NumericalError("eigenvalues of A failed");
  const double scale = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  for (int k = 0; k < grid.n_omega; ++k) {
    const cd s = kI * grid.omega(k);
    const double gap = (es.eigenvalues().array() - s).abs().minCoeff();
    if (gap <= 1e-12 * scale) {
      std::ostringstream os;
      os << "i omega_k I - A is singular at frequency index " << k << " (omega = " << grid.omega(k) << ")";
      throw NumericalError(os.str());
    }
  }
}

// Operators at frequency k from the projected pieces; shared by direct and affine builds.
void finish_frequency(int k, const Pieces& p, const LeftFactors& left, const LsqFactor& factor,
                      RomOperators& out, int r_k) {
  const auto kk = static_cast<std::size_t>(k);
  const CMat rhs = hstack({&p.pb, &p.pu, &p.ppsi});
  const CMat x = factor.solve(rhs);
  Eigen::Index c = 0;
  const auto take = [&](Eigen::Index n) {
    auto block = x.middleCols(c, n);
    c += n;
    return block;
  };
  const auto xb = take(p.pb.cols());
  out.e[kk] = left.psi * xb;
  out.j[kk] = left.phi * xb;
  if (p.pu.cols() > 0) {
    const auto xu = take(p.pu.cols());
    out.deim->n[kk] = left.psi * xu;
    out.deim->m[kk] = left.phi * xu;
  }
  if (p.ppsi.cols() > 0) {
    const auto xp = take(p.ppsi.cols());
    out.shift_n[kk] = out.shift * (left.psi * xp);
    out.shift_m[kk] = out.shift * (left.phi * xp);
  } else {
    out.shift_n[kk] = CMat::Zero(r_k, r_k);
    out.shift_m[kk] = CMat::Zero(out.p1(), r_k);
  }
  out.h[kk] = transient_operator(p.a_tilde, left.psi_w_phi, out.grid.omega(k), out.grid, r_k);
}

void allocate_operator_storage(RomOperators& ops) {
  const auto n = static_cast<std::size_t>(ops.grid.n_omega);
  ops.e.assign(n, {});
  ops.j.assign(n, {});
  ops.h.assign(n, {});
  ops.shift_n.assign(n, {});
  ops.shift_m.assign(n, {});
  if (ops.deim) {
    ops.deim->n.assign(n, {});
    ops.deim->m.assign(n, {});
  }
}

// Flat coefficient index -> (frequency, mode).
std::vector<std::pair<int, int>> flat_index_map(const CoefficientLayout& lay) {
  std::vector<std::pair<int, int>> map(static_cast<std::size_t>(lay.total));
  for (std::size_t k = 0; k < lay.counts.size(); ++k) {
    for (int m = 0; m < lay.counts[k]; ++m) map[static_cast<std::size_t>(lay.offsets[k] + m)] = {int(k), m};
  }
  return map;
}

// Features of every retained mode and n evaluated on each, for polarization.
struct ModeFeatures {
  std::vector<CMat> features;  // by flat index: N_x x F
  std::vector<CVec> self;      // g(features)
};

ModeFeatures mode_features(const Nonlinearity& nl, const SpodBasis& basis) {
  const CoefficientLayout lay = basis.layout();
  ModeFeatures mf;
  mf.features.resize(static_cast<std::size_t>(lay.total));
  mf.self.resize(static_cast<std::size_t>(lay.total));
  for (int k = 0; k < basis.n_omega(); ++k) {
    for (int m = 0; m < basis.r(k); ++m) {
      const auto idx = static_cast<std::size_t>(lay.offset(k) + m);
      mf.features[idx] = nl.features(basis.modes_full[static_cast<std::size_t>(k)].col(m));
      nl.pointwise(mf.features[idx], mf.self[idx]);
    }
  }
  return mf;
}

// Columns b(psi_first, psi_second) for a list of index pairs.
CMat bilinear_columns(const Nonlinearity& nl, const ModeFeatures& mf, const std::vector<int>& first,
                      const std::vector<int>& second, std::size_t begin, std::size_t end) {
  const std::size_t count = end - begin;
  if (count == 0) return CMat(0, 0);
  const Eigen::Index nx = mf.features.front().rows();
  const Eigen::Index nf = mf.features.front().cols();
  CMat stacked(nx * static_cast<Eigen::Index>(count), nf);
  for (std::size_t e = 0; e < count; ++e) {
    const auto a = static_cast<std::size_t>(first[begin + e]);
    const auto b = static_cast<std::size_t>(second[begin + e]);
    stacked.middleRows(static_cast<Eigen::Index>(e) * nx, nx) = mf.features[a] + mf.features[b];
  }
  CVec joint;
  nl.pointwise(stacked, joint);
  CMat cols(nx, static_cast<Eigen::Index>(count));
  for (std::size_t e = 0; e < count; ++e) {
    const auto a = static_cast<std::size_t>(first[begin + e]);
    const auto b = static_cast<std::size_t>(second[begin + e]);
    cols.col(static_cast<Eigen::Index>(e)) =
        0.5 * (joint.segment(static_cast<Eigen::Index>(e) * nx, nx) - mf.self[a] - mf.self[b]);
  }
  return cols;
}

// Non-aliased pairs (l, i) with omega_l + omega_i = omega_k exactly.
std::vector<std::pair<int, int>> triad_pairs(int k, const FrequencyGrid& grid) {
  const int n = grid.n_omega;
  const int lo = -(n / 2), hi = (n - 1) / 2 + (n % 2 == 0 ? 0 : 0);
  const int top = n % 2 == 0 ? n / 2 - 1 : hi;
  const int sk = grid.signed_index(k);
  std::vector<std::pair<int, int>> pairs;
  for (int sl = lo; sl <= top; ++sl) {
    const int si = sk - sl;
    if (si < lo || si > top) continue;
    pairs.emplace_back((sl + n) % n, (si + n) % n);
  }
  return pairs;
}

}  // namespace

LsqFactor factor_least_squares(const CMat& m) {
  // Tall M: reduce to the triangular factor first, then a small SVD.
  LsqFactor f;
  CMat r;
  CMat qthin;
  if (m.rows() > m.cols()) {
    Eigen::HouseholderQR<CMat> qr(m);
    qthin = qr.householderQ() * CMat::Identity(m.rows(), m.cols());
    r = qr.matrixQR().topRows(m.cols()).triangularView<Eigen::Upper>();
  } else {
    r = m;
  }
  Eigen::BDCSVD<CMat> svd(r, Eigen::ComputeThinU | Eigen::ComputeThinV);
  if (svd.info() != Eigen::Success) throw NumericalError("least-squares SVD failed");
  f.u = qthin.size() > 0 ? CMat(qthin * svd.matrixU()) : CMat(svd.matrixU());
  f.v = svd.matrixV();
  const RVec s = svd.singularValues();
  const double smin = s.size() > 0 ? s[s.size() - 1] : 0.0;
  f.condition = smin > 0 ? (s[0] / smin) * (s[0] / smin) : std::numeric_limits<double>::infinity();
  double lambda = 0.0;
  if (f.condition > kGramConditionLimit) {
    lambda = 1e-12 * s.squaredNorm() / static_cast<double>(m.cols());
    f.regularized = true;
  }
  f.filter.resize(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const double denom = s[i] * s[i] + lambda;
    f.filter[i] = denom > 0 ? s[i] / denom : 0.0;
  }
  if (!f.filter.allFinite()) throw NumericalError("least-squares factorization produced non-finite values");
  return f;
}

ResolventSurrogate::ResolventSurrogate(const SpectralStack& stack, const CMat& a, const RVec& weights)
    : stack_(&stack), weights_(weights) {
  check_resolvent_exists(a, stack.grid);
  const int n = stack.grid.n_omega;
  g_.resize(static_cast<std::size_t>(n));
  factors_.resize(static_cast<std::size_t>(n));
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < n; ++k) {
    const CMat& q = stack.blocks[static_cast<std::size_t>(k)];
    CMat g = kI * stack.grid.omega(k) * q - a * q;
    factors_[static_cast<std::size_t>(k)] = factor_least_squares(weights_.cwiseSqrt().asDiagonal() * g);
    g_[static_cast<std::size_t>(k)] = std::move(g);
  }
}

CMat ResolventSurrogate::coordinates(int k, const CMat& v) const {
  return factor(k).solve(weights_.cwiseSqrt().asDiagonal() * v);
}

CMat ResolventSurrogate::apply(int k, const CMat& v) const { return q(k) * coordinates(k, v); }

int ResolventSurrogate::regularized_count() const {
  return static_cast<int>(std::count_if(factors_.begin(), factors_.end(), [](const LsqFactor& f) { return f.regularized; }));
}

DeimBasis deim(const CMat& snapshots, int p2) {
  DeimBasis out;
  if (p2 <= 0) {
    out.u = CMat(snapshots.rows(), 0);
    out.ud = out.u;
    return out;
  }
  Eigen::BDCSVD<CMat> svd(snapshots, Eigen::ComputeThinU);
  const RVec& s = svd.singularValues();
  int rank = 0;
  while (rank < s.size() && s[rank] > 1e-12 * s[0]) ++rank;
  if (p2 > rank) {
    warn("DEIM: snapshot rank " + std::to_string(rank) + " is below p2 = " + std::to_string(p2) + "; reducing");
    p2 = rank;
  }
  out.u = svd.matrixU().leftCols(p2);
  out.samples.reserve(static_cast<std::size_t>(p2));
  Eigen::Index idx = 0;
  out.u.col(0).cwiseAbs().maxCoeff(&idx);
  out.samples.push_back(static_cast<int>(idx));
  for (int l = 1; l < p2; ++l) {
    CMat pu(l, l);
    CVec pv(l);
    for (int i = 0; i < l; ++i) {
      pu.row(i) = out.u.row(out.samples[static_cast<std::size_t>(i)]).head(l);
      pv[i] = out.u(out.samples[static_cast<std::size_t>(i)], l);
    }
    const CVec c = pu.partialPivLu().solve(pv);
    const CVec res = out.u.col(l) - out.u.leftCols(l) * c;
    res.cwiseAbs().maxCoeff(&idx);
    out.samples.push_back(static_cast<int>(idx));
  }
  CMat pu(p2, p2);
  for (int i = 0; i < p2; ++i) pu.row(i) = out.u.row(out.samples[static_cast<std::size_t>(i)]);
  Eigen::JacobiSVD<CMat> sv(pu);
  out.condition = sv.singularValues()(0) / sv.singularValues()(p2 - 1);
  out.ud = out.u * pu.inverse();
  return out;
}

CVec deim_approximate(const DeimBasis& basis, const CVec& v) {
  CVec pv(static_cast<Eigen::Index>(basis.samples.size()));
  for (std::size_t i = 0; i < basis.samples.size(); ++i) pv[static_cast<Eigen::Index>(i)] = v[basis.samples[i]];
  return basis.ud * pv;
}

CVec symmetric_bilinear(const Nonlinearity& n, const CVec& q1, const CVec& q2) {
  if (n.degree() != 2) throw InvalidArgument("symmetric bilinear form needs a quadratic nonlinearity");
  return 0.5 * (n(q1 + q2) - n(q1) - n(q2));
}

std::string to_string(ClosureKind kind) {
  switch (kind) {
    case ClosureKind::None: return "none";
    case ClosureKind::Deim: return "deim";
    case ClosureKind::Triadic: return "triadic";
  }
  return "none";
}

ClosureKind closure_from_string(const std::string& name) {
  if (name == "none") return ClosureKind::None;
  if (name == "deim") return ClosureKind::Deim;
  if (name == "triadic") return ClosureKind::Triadic;
  throw InvalidArgument("closure must be none, deim or triadic");
}

std::string to_string(HMode mode) { return mode == HMode::Galerkin ? "galerkin" : "runs"; }

HMode h_mode_from_string(const std::string& name) {
  if (name == "galerkin") return HMode::Galerkin;
  if (name == "runs") return HMode::Runs;
  throw InvalidArgument("h-mode must be galerkin or runs");
}

CMat geometric_sum_operator(const CMat& a, double omega, const FrequencyGrid& grid) {
  const CMat e1 = (a * grid.dt).exp();
  const CMat et = matrix_power(e1, grid.n_omega);
  if (!et.allFinite()) throw NumericalError("matrix exponential overflow; apply a stability shift");
  const CMat lhs = CMat::Identity(a.rows(), a.cols()) - std::exp(-kI * omega * grid.dt) * e1;
  return lhs.partialPivLu().solve(CMat::Identity(a.rows(), a.cols()) - et);
}

CMat transient_operator(const CMat& a_tilde, const CMat& psi_w_phi, double omega, const FrequencyGrid& grid,
                        int r_k) {
  const CMat full = geometric_sum_operator(a_tilde, omega, grid) * psi_w_phi;
  return full.topRows(r_k);
}

std::vector<CMat> transient_from_runs(const CMat& a, const CMat& phi, const SpodBasis& basis,
                                      const OdeOptions& ode) {
  const int n_omega = basis.n_omega();
  std::vector<CMat> h(static_cast<std::size_t>(n_omega));
  for (int k = 0; k < n_omega; ++k) h[static_cast<std::size_t>(k)] = CMat(basis.r(k), phi.cols());
  std::vector<double> times(static_cast<std::size_t>(n_omega));
  for (int j = 0; j < n_omega; ++j) times[static_cast<std::size_t>(j)] = basis.grid.time(j);
  const auto rhs = [&a](double, const CVec& y, CVec& dy) { dy.noalias() = a * y; };
  for (Eigen::Index l = 0; l < phi.cols(); ++l) {
    const CMat traj = integrate_dense(rhs, phi.col(l), times, ode);
    const CMat spec = basis.weights.asDiagonal() * dft_block(traj);
    for (int k = 0; k < n_omega; ++k) {
      h[static_cast<std::size_t>(k)].col(l) = basis.modes(k).adjoint() * spec.col(k);
    }
  }
  return h;
}

CMat nonlinearity_snapshots(const Nonlinearity& n, const CMat& states) {
  CMat out(states.rows(), states.cols());
  for (Eigen::Index j = 0; j < states.cols(); ++j) out.col(j) = n(states.col(j));
  return out;
}

namespace {

void build_deim_sampling(const Nonlinearity& nl, const SpodBasis& basis, DeimOperators& d) {
  const int nfeat = nl.n_features();
  d.s.assign(static_cast<std::size_t>(nfeat), std::vector<CMat>(static_cast<std::size_t>(basis.n_omega())));
  for (int f = 0; f < nfeat; ++f) {
    for (int k = 0; k < basis.n_omega(); ++k) {
      const CMat mapped = f == 0 ? CMat(basis.modes(k)) : CMat(nl.feature_map(f) * basis.modes(k));
      CMat s(d.p2, basis.r(k));
      for (int i = 0; i < d.p2; ++i) s.row(i) = mapped.row(d.samples[static_cast<std::size_t>(i)]);
      d.s[static_cast<std::size_t>(f)][static_cast<std::size_t>(k)] = std::move(s);
    }
  }
}

// Converts coordinate matrices of candidate triads into a thresholded block.
void threshold_triads(int k, const CMat& x, const LeftFactors& left, const std::vector<int>& first,
                      const std::vector<int>& second, const SpodBasis& basis,
                      const std::vector<std::pair<int, int>>& fmap, double epsilon, bool keep_all,
                      TriadicBlock& block, RMat* impact) {
  const double inv_n = 1.0 / basis.n_omega();
  const CMat n_all = inv_n * (left.psi * x);
  // Proxy uses the coefficient without the 1/N_omega factor folded into n.
  const double scale = static_cast<double>(basis.n_omega()) * basis.n_omega();
  std::vector<Eigen::Index> kept;
  for (Eigen::Index e = 0; e < x.cols(); ++e) {
    const auto [l, m] = fmap[static_cast<std::size_t>(first[static_cast<std::size_t>(e)])];
    const auto [i, n] = fmap[static_cast<std::size_t>(second[static_cast<std::size_t>(e)])];
    const double proxy = scale * n_all.col(e).squaredNorm() * basis.energies[static_cast<std::size_t>(l)][m] *
                         basis.energies[static_cast<std::size_t>(i)][n];
    if (impact != nullptr) (*impact)(k, l) += proxy;
    if (keep_all || proxy > epsilon) kept.push_back(e);
  }
  const auto count = static_cast<Eigen::Index>(kept.size());
  block.first.resize(kept.size());
  block.second.resize(kept.size());
  block.n.resize(n_all.rows(), count);
  CMat xk(x.rows(), count);
  for (Eigen::Index c = 0; c < count; ++c) {
    const auto e = kept[static_cast<std::size_t>(c)];
    block.first[static_cast<std::size_t>(c)] = first[static_cast<std::size_t>(e)];
    block.second[static_cast<std::size_t>(c)] = second[static_cast<std::size_t>(e)];
    block.n.col(c) = n_all.col(e);
    xk.col(c) = x.col(e);
  }
  block.m = inv_n * (left.phi * xk);
}

}  // namespace

RomOperators build_operators(const System& sys, const SpodBasis& basis, const TrainingData& data,
                             const OfflineOptions& options, OfflineReport* report) {
  const auto t0 = std::chrono::steady_clock::now();
  const int n_omega = basis.n_omega();
  const SpectralStack& stack = data.stack;
  if (static_cast<int>(stack.blocks.size()) != n_omega) throw InvalidArgument("stack and basis disagree on N_omega");
  if (stack.n_x() != sys.size() || basis.n_x() != sys.size()) throw InvalidArgument("state sizes disagree");
  if (options.closure == ClosureKind::Triadic && sys.nonlinearity.degree() != 2) {
    throw InvalidArgument("triadic closure needs an exactly quadratic nonlinearity");
  }

  RomOperators ops;
  ops.grid = basis.grid;
  ops.layout = basis.layout();
  ops.weights = sys.weights;
  ops.n_inputs = sys.n_inputs();
  ops.shift = sys.shift;
  ops.h_mode = options.h_mode;
  ops.closure = options.closure;
  ops.nonlinearity = sys.nonlinearity;
  ops.phi = compute_pod(data.snapshots, sys.weights, options.p1).modes;

  const CMat a = sys.linear_operator();
  check_resolvent_exists(a, basis.grid);

  DeimBasis dbasis;
  if (options.closure == ClosureKind::Deim) {
    dbasis = deim(nonlinearity_snapshots(sys.nonlinearity, data.snapshots), options.p2);
    ops.deim.emplace();
    ops.deim->p2 = static_cast<int>(dbasis.samples.size());
    ops.deim->samples = dbasis.samples;
    build_deim_sampling(sys.nonlinearity, basis, *ops.deim);
  }
  allocate_operator_storage(ops);

  const RVec& w = sys.weights;
  const RVec wsqrt = w.cwiseSqrt();
  const bool shifted = sys.shift != 0.0;
  const bool triadic = options.closure == ClosureKind::Triadic;
  std::vector<LsqFactor> factors(static_cast<std::size_t>(n_omega));
  std::vector<LeftFactors> lefts(triadic ? static_cast<std::size_t>(n_omega) : 0);
  const CMat pb = wsqrt.asDiagonal() * sys.b;
  const CMat pu = ops.deim ? CMat(wsqrt.asDiagonal() * dbasis.ud) : CMat();

#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < n_omega; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    const CMat& q = stack.blocks[kk];
    const CMat& psi_full = basis.modes_full[kk];
    const CMat g = kI * basis.grid.omega(k) * q - a * q;
    Pieces p;
    p.pb = pb;
    p.pu = pu;
    if (shifted) p.ppsi = wsqrt.asDiagonal() * basis.modes(k);
    p.a_tilde = winner(psi_full, w, a * psi_full);
    LeftFactors left;
    left.psi = winner(basis.modes(k), w, q);
    left.phi = winner(ops.phi, w, q);
    left.psi_w_phi = winner(psi_full, w, ops.phi);
    factors[kk] = factor_least_squares(wsqrt.asDiagonal() * g);
    finish_frequency(k, p, left, factors[kk], ops, basis.r(k));
    if (triadic) lefts[kk] = std::move(left);
  }

  if (options.h_mode == HMode::Runs) ops.h = transient_from_runs(a, ops.phi, basis, options.ode);

  if (triadic) {
    TriadicTable table;
    table.epsilon = options.epsilon;
    table.blocks.resize(static_cast<std::size_t>(n_omega));
    if (options.record_impact) table.impact = RMat::Zero(n_omega, n_omega);
    const ModeFeatures mf = mode_features(sys.nonlinearity, basis);
    const auto fmap = flat_index_map(ops.layout);
    const bool keep_all = options.epsilon <= 0.0;
    long long candidates = 0;
#pragma omp parallel for schedule(dynamic) reduction(+ : candidates)
    for (int k = 0; k < n_omega; ++k) {
      const auto kk = static_cast<std::size_t>(k);
      std::vector<int> first, second;
      for (const auto& [l, i] : triad_pairs(k, basis.grid)) {
        for (int m = 0; m < basis.r(l); ++m) {
          for (int n = 0; n < basis.r(i); ++n) {
            first.push_back(ops.layout.offset(l) + m);
            second.push_back(ops.layout.offset(i) + n);
          }
        }
      }
      candidates += static_cast<long long>(first.size());
      TriadicBlock& block = table.blocks[kk];
      if (first.empty() || (!keep_all && std::isinf(options.epsilon))) {
        block.n = CMat(basis.r(k), 0);
        block.m = CMat(ops.p1(), 0);
        continue;
      }
      // Bounded batches keep the N_x x batch workspace small.
      constexpr std::size_t kBatch = 2048;
      TriadicBlock acc;
      acc.n = CMat(basis.r(k), 0);
      acc.m = CMat(ops.p1(), 0);
      for (std::size_t b0 = 0; b0 < first.size(); b0 += kBatch) {
        const std::size_t b1 = std::min(first.size(), b0 + kBatch);
        const CMat cols = bilinear_columns(sys.nonlinearity, mf, first, second, b0, b1);
        const CMat x = factors[kk].solve(wsqrt.asDiagonal() * cols);
        const std::vector<int> f(first.begin() + static_cast<long>(b0), first.begin() + static_cast<long>(b1));
        const std::vector<int> s(second.begin() + static_cast<long>(b0), second.begin() + static_cast<long>(b1));
        TriadicBlock part;
        threshold_triads(k, x, lefts[kk], f, s, basis, fmap, options.epsilon, keep_all, part,
                         options.record_impact ? &table.impact : nullptr);
        acc.first.insert(acc.first.end(), part.first.begin(), part.first.end());
        acc.second.insert(acc.second.end(), part.second.begin(), part.second.end());
        CMat nn(acc.n.rows(), acc.n.cols() + part.n.cols());
        nn << acc.n, part.n;
        CMat mm(acc.m.rows(), acc.m.cols() + part.m.cols());
        mm << acc.m, part.m;
        acc.n = std::move(nn);
        acc.m = std::move(mm);
      }
      block = std::move(acc);
    }
    table.candidates = candidates;
    table.retained = 0;
    for (const auto& b : table.blocks) table.retained += static_cast<long long>(b.first.size());
    ops.triadic = std::move(table);
  }

  if (report != nullptr) {
    report->regularized_frequencies = 0;
    report->max_gram_condition = 0.0;
    for (const auto& f : factors) {
      report->regularized_frequencies += f.regularized ? 1 : 0;
      report->max_gram_condition = std::max(report->max_gram_condition, f.condition);
    }
    report->deim_condition = dbasis.condition;
    report->seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  int regularized = 0;
  for (const auto& f : factors) regularized += f.regularized ? 1 : 0;
  if (regularized > 0) {
    warn(std::to_string(regularized) + " of " + std::to_string(n_omega) +
         " frequencies needed gram regularization (condition > 1e12)");
  }
  return ops;
}

AffineBundle::AffineBundle(const System& sys, const SpodBasis& basis, const TrainingData& data,
                           const RomOperators& reference, const OfflineOptions& options)
    : op_(&sys.op) {
  if (reference.h_mode == HMode::Runs) throw InvalidArgument("simulated transient operators cannot be reassembled");
  skeleton_ = reference;
  skeleton_.e.clear();
  skeleton_.j.clear();
  skeleton_.h.clear();
  skeleton_.shift_n.clear();
  skeleton_.shift_m.clear();
  if (skeleton_.deim) {
    skeleton_.deim->n.clear();
    skeleton_.deim->m.clear();
  }
  const int n_omega = basis.n_omega();
  const int n_aff = static_cast<int>(sys.op.terms.size());
  n_terms_ = n_aff + 1;
  const auto nk = static_cast<std::size_t>(n_omega);
  r_.assign(nk, {});
  zb_.assign(nk, {});
  zu_.assign(nk, {});
  zpsi_.assign(nk, {});
  zbil_.assign(nk, {});
  a_tilde_.assign(nk, {});
  left_psi_.assign(nk, {});
  left_phi_.assign(nk, {});
  psi_w_phi_.assign(nk, {});

  CMat ud;
  if (reference.deim) {
    ud = deim(nonlinearity_snapshots(sys.nonlinearity, data.snapshots), options.p2).ud;
    if (ud.cols() != reference.deim->p2) throw InvalidArgument("DEIM basis does not match the reference operators");
  }
  const RVec& w = sys.weights;
  const RVec wsqrt = w.cwiseSqrt();
  std::optional<ModeFeatures> mf;
  if (reference.triadic) mf = mode_features(sys.nonlinearity, basis);

#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < n_omega; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    const CMat& q = data.stack.blocks[kk];
    const Eigen::Index nd = q.cols();
    const CMat& psi_full = basis.modes_full[kk];
    // Term 0 carries theta = i omega_k + shift, term j >= 1 carries zeta_j(mu) with G_j = -A_j Q.
    CMat stacked(q.rows(), nd * n_terms_);
    stacked.leftCols(nd) = wsqrt.asDiagonal() * q;
    for (int j = 0; j < n_aff; ++j) {
      stacked.middleCols(nd * (j + 1), nd) = -(wsqrt.asDiagonal() * (sys.op.terms[static_cast<std::size_t>(j)].a * q));
    }
    Eigen::HouseholderQR<CMat> qr(stacked);
    const Eigen::Index rank_cols = std::min(stacked.rows(), stacked.cols());
    const CMat z = qr.householderQ() * CMat::Identity(stacked.rows(), rank_cols);
    const CMat rr = z.adjoint() * stacked;
    for (int j = 0; j < n_terms_; ++j) r_[kk].push_back(rr.middleCols(nd * j, nd));
    zb_[kk] = z.adjoint() * (wsqrt.asDiagonal() * sys.b);
    zu_[kk] = z.adjoint() * (wsqrt.asDiagonal() * ud);
    zpsi_[kk] = z.adjoint() * (wsqrt.asDiagonal() * basis.modes(k));
    if (mf) {
      const auto& blk = reference.triadic->blocks[kk];
      const CMat bil = bilinear_columns(sys.nonlinearity, *mf, blk.first, blk.second, 0, blk.first.size());
      zbil_[kk] = bil.cols() > 0 ? CMat(z.adjoint() * (wsqrt.asDiagonal() * bil)) : CMat(z.cols(), 0);
    }
    for (int j = 0; j < n_aff; ++j) {
      a_tilde_[kk].push_back(winner(psi_full, w, sys.op.terms[static_cast<std::size_t>(j)].a * psi_full));
    }
    left_psi_[kk] = winner(basis.modes(k), w, q);
    left_phi_[kk] = winner(reference.phi, w, q);
    psi_w_phi_[kk] = winner(psi_full, w, reference.phi);
  }
}

std::vector<cd> AffineBundle::thetas(int k, const std::vector<double>& mu, double shift) const {
  std::vector<cd> th;
  th.reserve(static_cast<std::size_t>(n_terms_));
  th.push_back(kI * skeleton_.grid.omega(k) + shift);
  for (const auto& z : op_->coefficients(mu)) th.push_back(z);
  return th;
}

CMat AffineBundle::compressed(int k, const std::vector<double>& mu, double shift) const {
  const auto th = thetas(k, mu, shift);
  const auto& rk = r_[static_cast<std::size_t>(k)];
  CMat out = th[0] * rk[0];
  for (int j = 1; j < n_terms_; ++j) out += th[static_cast<std::size_t>(j)] * rk[static_cast<std::size_t>(j)];
  return out;
}

CMat AffineBundle::gram(int k, const std::vector<double>& mu, double shift) const {
  const CMat m = compressed(k, mu, shift);
  return m.adjoint() * m;
}

RomOperators AffineBundle::assemble(const std::vector<double>& mu, double shift) const {
  RomOperators ops = skeleton_;
  ops.shift = shift;
  allocate_operator_storage(ops);
  const int n_omega = ops.grid.n_omega;
  const auto zeta = op_->coefficients(mu);
  const bool shifted = shift != 0.0;
#pragma omp parallel for schedule(dynamic)
  for (int k = 0; k < n_omega; ++k) {
    const auto kk = static_cast<std::size_t>(k);
    Pieces p;
    p.pb = zb_[kk];
    if (ops.deim) p.pu = zu_[kk];
    if (shifted) p.ppsi = zpsi_[kk];
    p.a_tilde = -shift * CMat::Identity(a_tilde_[kk].front().rows(), a_tilde_[kk].front().cols());
    for (std::size_t j = 0; j < zeta.size(); ++j) p.a_tilde += zeta[j] * a_tilde_[kk][j];
    const LeftFactors left{left_psi_[kk], left_phi_[kk], psi_w_phi_[kk]};
    const LsqFactor factor = factor_least_squares(compressed(k, mu, shift));
    finish_frequency(k, p, left, factor, ops, ops.layout.size(k));
    if (ops.triadic) {
      auto& block = ops.triadic->blocks[kk];
      if (!block.first.empty()) {
        const CMat x = factor.solve(zbil_[kk]);
        const double inv_n = 1.0 / n_omega;
        block.n = inv_n * (left.psi * x);
        block.m = inv_n * (left.phi * x);
      }
    }
  }
  return ops;
}

std::size_t AffineBundle::bytes() const {
  std::size_t total = 0;
  const auto add = [&](const CMat& m) { total += static_cast<std::size_t>(m.size()) * sizeof(cd); };
  for (std::size_t k = 0; k < r_.size(); ++k) {
    for (const auto& m : r_[k]) add(m);
    for (const auto& m : a_tilde_[k]) add(m);
    for (const auto* m : {&zb_[k], &zu_[k], &zpsi_[k], &zbil_[k], &left_psi_[k], &left_phi_[k], &psi_w_phi_[k]}) add(*m);
  }
  return total;
}

}  // namespace ssop
