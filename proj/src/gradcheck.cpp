#include "patchwork/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "patchwork/errors.hpp"

namespace patchwork {

GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::function<void()>& compute_grads,
                           const std::vector<Param*>& params, Rng& rng,
                           const GradCheckOptions& opt) {
  compute_grads();
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);

  GradCheckReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param* p = params[pi];
    GradCheckEntry entry;
    entry.param = p->name;
    const int64_t n = p->value.numel();
    std::vector<int64_t> coords;
    if (n <= opt.coords_per_param) {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      coords.reserve(static_cast<size_t>(opt.coords_per_param));
      for (int i = 0; i < opt.coords_per_param; ++i) {
        coords.push_back(static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n))));
      }
    }
    for (int64_t idx : coords) {
      double& w = p->value.data[static_cast<size_t>(idx)];
      const double w0 = w;
      w = w0 + opt.h;
      const double f_p = loss_fn();
      w = w0 - opt.h;
      const double f_m = loss_fn();
      w = w0 + opt.h / 2;
      const double f_ph = loss_fn();
      w = w0 - opt.h / 2;
      const double f_mh = loss_fn();
      w = w0;
      const double fd = (f_p - f_m) / (2.0 * opt.h);
      const double fd_half = (f_ph - f_mh) / opt.h;
      const double scale = std::max({std::abs(fd), std::abs(fd_half), opt.rel_floor});
      if (std::abs(fd - fd_half) > opt.kink_tol * scale) {
        ++entry.skipped;
        continue;
      }
      const double g = analytic[pi].data[static_cast<size_t>(idx)];
      const double denom = std::max({std::abs(fd), std::abs(g), opt.rel_floor});
      const double rel = std::abs(fd - g) / denom;
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      ++entry.checked;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.total_checked += entry.checked;
    report.total_skipped += entry.skipped;
    report.per_param.push_back(std::move(entry));
  }
  return report;
}

}  // namespace patchwork
