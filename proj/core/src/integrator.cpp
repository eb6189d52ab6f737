#include "ssop/integrator.hpp"

#include <algorithm>
#include <sstream>

namespace ssop {

namespace {

constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247, a64 = 49.0 / 176,
                 a65 = -5103.0 / 18656;
constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192, a75 = -2187.0 / 6784,
                 a76 = 11.0 / 84;
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920, e5 = -17253.0 / 339200,
                 e6 = 22.0 / 525, e7 = -1.0 / 40;
constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                 d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                 d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;

// PI step-size controller constants (Hairer, Norsett, Wanner).
constexpr double kSafety = 0.9, kFacMin = 0.2, kFacMax = 10.0, kBeta = 0.04;
constexpr double kExpo = 0.2 - kBeta * 0.75;

}  // namespace

DormandPrince::DormandPrince(OdeRhs rhs, OdeOptions options) : rhs_(std::move(rhs)), opt_(options) {
  if (!(opt_.rtol > 0) || !(opt_.atol > 0)) throw InvalidArgument("tolerances must be positive");
}

double DormandPrince::error_norm(const CVec& err, const CVec& y0, const CVec& y1) const {
  double acc = 0.0;
  const Eigen::Index n = err.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double sk = opt_.atol + opt_.rtol * std::max(std::abs(y0[i]), std::abs(y1[i]));
    const double r = std::abs(err[i]) / sk;
    acc += r * r;
  }
  return n > 0 ? std::sqrt(acc / static_cast<double>(n)) : 0.0;
}

double DormandPrince::initial_step(double t0, const CVec& y0) {
  const auto scaled_norm = [&](const CVec& v) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const double r = std::abs(v[i]) / (opt_.atol + opt_.rtol * std::abs(y0[i]));
      acc += r * r;
    }
    return v.size() > 0 ? std::sqrt(acc / static_cast<double>(v.size())) : 0.0;
  };
  const double dnf = scaled_norm(k1_);
  const double dny = scaled_norm(y0);
  double h = (dnf <= 1e-10 || dny <= 1e-10) ? 1e-6 : 0.01 * dny / dnf;
  h = std::min(h, opt_.max_step);
  ytmp_ = y0 + h * k1_;
  rhs_(t0 + h, ytmp_, k2_);
  ++stats_.rhs_evals;
  const double der2 = scaled_norm(k2_ - k1_) / h;
  const double der12 = std::max(der2, dnf);
  const double h1 = der12 <= 1e-15 ? std::max(1e-6, h * 1e-3) : std::pow(0.01 / der12, 0.2);
  return std::min({100 * h, h1, opt_.max_step});
}

void DormandPrince::reset(double t0, const CVec& y0) {
  const auto n = y0.size();
  for (CVec* v : {&k1_, &k2_, &k3_, &k4_, &k5_, &k6_, &k7_, &ytmp_, &ynew_, &rc1_, &rc2_, &rc3_,
                  &rc4_, &rc5_}) {
    v->resize(n);
  }
  t_ = t_old_ = t0;
  y_ = y0;
  rc1_ = y0;
  rc2_.setZero();
  rc3_.setZero();
  rc4_.setZero();
  rc5_.setZero();
  stats_ = {};
  err_old_ = 1e-4;
  rhs_(t_, y_, k1_);
  ++stats_.rhs_evals;
  h_ = opt_.initial_step > 0 ? opt_.initial_step : initial_step(t_, y_);
}

void DormandPrince::step(double t_limit) {
  bool last_rejected = false;
  for (;;) {
    if (stats_.accepted + stats_.rejected >= opt_.max_steps) {
      throw IntegrationFailure("step budget exhausted", t_);
    }
    const double h_planned = std::min(h_, opt_.max_step);
    double h = h_planned;
    if (t_ + h > t_limit) h = t_limit - t_;
    if (h <= 1e-14 * std::max(1.0, std::abs(t_))) {
      std::ostringstream os;
      os << "step size underflow at t = " << t_;
      throw IntegrationFailure(os.str(), t_);
    }

    ytmp_ = y_ + h * a21 * k1_;
    rhs_(t_ + c2 * h, ytmp_, k2_);
    ytmp_ = y_ + h * (a31 * k1_ + a32 * k2_);
    rhs_(t_ + c3 * h, ytmp_, k3_);
    ytmp_ = y_ + h * (a41 * k1_ + a42 * k2_ + a43 * k3_);
    rhs_(t_ + c4 * h, ytmp_, k4_);
    ytmp_ = y_ + h * (a51 * k1_ + a52 * k2_ + a53 * k3_ + a54 * k4_);
    rhs_(t_ + c5 * h, ytmp_, k5_);
    ytmp_ = y_ + h * (a61 * k1_ + a62 * k2_ + a63 * k3_ + a64 * k4_ + a65 * k5_);
    rhs_(t_ + h, ytmp_, k6_);
    ynew_ = y_ + h * (a71 * k1_ + a73 * k3_ + a74 * k4_ + a75 * k5_ + a76 * k6_);
    rhs_(t_ + h, ynew_, k7_);
    stats_.rhs_evals += 6;

    ytmp_ = h * (e1 * k1_ + e3 * k3_ + e4 * k4_ + e5 * k5_ + e6 * k6_ + e7 * k7_);
    const double err = error_norm(ytmp_, y_, ynew_);
    if (!std::isfinite(err)) {
      ++stats_.rejected;
      h_ = 0.1 * h;
      last_rejected = true;
      continue;
    }

    const double fac11 = std::pow(std::max(err, 1e-300), kExpo);
    if (err <= 1.0) {
      double fac = fac11 / std::pow(err_old_, kBeta) / kSafety;
      fac = std::clamp(fac, 1.0 / kFacMax, 1.0 / kFacMin);
      double hnew = h / fac;
      if (last_rejected) hnew = std::min(hnew, h);
      err_old_ = std::max(err, 1e-4);

      rc1_ = y_;
      rc2_ = ynew_ - y_;
      rc3_ = h * k1_ - rc2_;
      rc4_ = rc2_ - h * k7_ - rc3_;
      rc5_ = h * (d1 * k1_ + d3 * k3_ + d4 * k4_ + d5 * k5_ + d6 * k6_ + d7 * k7_);

      t_old_ = t_;
      t_ += h;
      y_.swap(ynew_);
      k1_.swap(k7_);
      // A step clipped at t_limit says little about the admissible size.
      h_ = h < h_planned ? std::max(hnew, h_planned) : hnew;
      ++stats_.accepted;
      return;
    }
    h_ = h / std::min(1.0 / kFacMin, fac11 / kSafety);
    ++stats_.rejected;
    last_rejected = true;
  }
}

CVec DormandPrince::interpolate(double t) const {
  const double h = t_ - t_old_;
  if (h <= 0) return y_;
  const double th = (t - t_old_) / h;
  const double th1 = 1.0 - th;
  return rc1_ + th * (rc2_ + th1 * (rc3_ + th * (rc4_ + th1 * rc5_)));
}

CMat integrate_dense(const OdeRhs& rhs, const CVec& y0, const std::vector<double>& t_out,
                     const OdeOptions& options, OdeStats* stats) {
  CMat out(y0.size(), static_cast<Eigen::Index>(t_out.size()));
  if (t_out.empty()) return out;
  if (!std::is_sorted(t_out.begin(), t_out.end())) throw InvalidArgument("output times must ascend");
  DormandPrince dp(rhs, options);
  dp.reset(t_out.front(), y0);
  out.col(0) = y0;
  const double t_end = t_out.back();
  std::size_t next = 1;
  while (next < t_out.size()) {
    if (t_out[next] <= dp.t()) {
      out.col(static_cast<Eigen::Index>(next)) =
          t_out[next] == dp.t() ? dp.y() : dp.interpolate(t_out[next]);
      ++next;
      continue;
    }
    dp.step(t_end);
  }
  if (stats != nullptr) *stats = dp.stats();
  return out;
}

}  // namespace ssop
