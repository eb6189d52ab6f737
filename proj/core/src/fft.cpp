#include "ssop/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

namespace ssop::fft {

namespace {

using PlanKey = std::tuple<int, int, int, int, int>;

// FFTW planning is not thread safe, execution of an existing plan on new arrays is.
class PlanCache {
 public:
  ~PlanCache() {
    for (auto& [key, plan] : plans_) fftw_destroy_plan(plan);
  }

  fftw_plan get(int n, int howmany, int stride, int dist, int sign) {
    const PlanKey key{n, howmany, stride, dist, sign};
    std::lock_guard lock(mutex_);
    if (auto it = plans_.find(key); it != plans_.end()) return it->second;
    const std::size_t span = static_cast<std::size_t>(n - 1) * stride +
                             static_cast<std::size_t>(howmany - 1) * dist + 1;
    auto* scratch = fftw_alloc_complex(span);
    fftw_plan plan = fftw_plan_many_dft(1, &n, howmany, scratch, nullptr, stride, dist, scratch,
                                        nullptr, stride, dist, sign,
                                        FFTW_ESTIMATE | FFTW_UNALIGNED);
    fftw_free(scratch);
    if (plan == nullptr) throw NumericalError("fftw planning failed");
    plans_.emplace(key, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<PlanKey, fftw_plan> plans_;
};

PlanCache& cache() {
  static PlanCache instance;
  return instance;
}

}  // namespace

void transform(cd* data, int n, int howmany, int stride, int dist, int sign) {
  if (n <= 0 || howmany <= 0) return;
  fftw_plan plan = cache().get(n, howmany, stride, dist, sign < 0 ? FFTW_FORWARD : FFTW_BACKWARD);
  auto* p = reinterpret_cast<fftw_complex*>(data);
  fftw_execute_dft(plan, p, p);
}

CMat forward(const CMat& x) {
  CMat out = x;
  transform(out.data(), static_cast<int>(out.cols()), static_cast<int>(out.rows()),
            static_cast<int>(out.rows()), 1, -1);
  return out;
}

CMat inverse(const CMat& xh) {
  CMat out = xh;
  transform(out.data(), static_cast<int>(out.cols()), static_cast<int>(out.rows()),
            static_cast<int>(out.rows()), 1, +1);
  if (out.cols() > 0) out /= static_cast<double>(out.cols());
  return out;
}

CVec forward(const CVec& x) {
  CVec out = x;
  transform(out.data(), static_cast<int>(out.size()), 1, 1, 1, -1);
  return out;
}

CVec inverse(const CVec& xh) {
  CVec out = xh;
  transform(out.data(), static_cast<int>(out.size()), 1, 1, 1, +1);
  if (out.size() > 0) out /= static_cast<double>(out.size());
  return out;
}

}  // namespace ssop::fft
