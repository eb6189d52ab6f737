#pragma once

#include <limits>
#include <vector>

#include "ssop/common.hpp"

namespace ssop {

struct OdeOptions {
  double rtol = 1e-8;
  double atol = 1e-10;
  double initial_step = 0.0;  // 0 selects a step automatically
  double max_step = std::numeric_limits<double>::infinity();
  long max_steps = 50'000'000;
};

struct OdeStats {
  long accepted = 0;
  long rejected = 0;
  long rhs_evals = 0;
};

using OdeRhs = std::function<void(double t, const CVec& y, CVec& dydt)>;

// Dormand-Prince 5(4) with the 4th-order continuous extension of Hairer's dopri5.
class DormandPrince {
 public:
  DormandPrince(OdeRhs rhs, OdeOptions options);

  void reset(double t0, const CVec& y0);
  // Advances by one accepted step; never overshoots t_limit.
  void step(double t_limit = std::numeric_limits<double>::infinity());

  double t() const { return t_; }
  double t_previous() const { return t_old_; }
  const CVec& y() const { return y_; }
  const CVec& dydt() const { return k1_; }
  double step_size() const { return h_; }
  // Dense output, valid for t in [t_previous(), t()].
  CVec interpolate(double t) const;
  const OdeStats& stats() const { return stats_; }

 private:
  double error_norm(const CVec& err, const CVec& y0, const CVec& y1) const;
  double initial_step(double t0, const CVec& y0);

  OdeRhs rhs_;
  OdeOptions opt_;
  OdeStats stats_;
  double t_ = 0.0, t_old_ = 0.0, h_ = 0.0, err_old_ = 1e-4;
  CVec y_, k1_, k2_, k3_, k4_, k5_, k6_, k7_, ytmp_, ynew_;
  CVec rc1_, rc2_, rc3_, rc4_, rc5_;
};

// Integrates from t_out.front() and returns the state at every output time (columns).
CMat integrate_dense(const OdeRhs& rhs, const CVec& y0, const std::vector<double>& t_out,
                     const OdeOptions& options, OdeStats* stats = nullptr);

}  // namespace ssop
