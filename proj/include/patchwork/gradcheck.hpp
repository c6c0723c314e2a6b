#pragma once

#include <functional>
#include <string>
#include <vector>

#include "patchwork/layers.hpp"
#include "patchwork/rng.hpp"

namespace patchwork {

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
  int checked = 0;
  int skipped = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> per_param;
  double max_rel_err = 0.0;
  int total_checked = 0;
  int total_skipped = 0;
  double skipped_fraction() const {
    int total = total_checked + total_skipped;
    return total == 0 ? 0.0 : static_cast<double>(total_skipped) / total;
  }
};

struct GradCheckOptions {
  double h = 1e-5;
  int coords_per_param = 200;
  // A coordinate is skipped when finite differences at h and h/2 disagree by
  // more than this relative amount; that flags a kink (ReLU corner, pool tie
  // flip) crossed inside the probe interval, where no step size is trustworthy.
  // A wrong analytic gradient does not trip this filter because both probes
  // stay mutually consistent.
  double kink_tol = 2e-4;
  double rel_floor = 1e-6;
};

// Central-difference check of analytic gradients. loss_fn must recompute the
// full forward pass and return the scalar loss for the current parameter
// values; compute_grads must zero and refill every param's grad field.
GradCheckReport grad_check(const std::function<double()>& loss_fn,
                           const std::function<void()>& compute_grads,
                           const std::vector<Param*>& params, Rng& rng,
                           const GradCheckOptions& options = {});

}  // namespace patchwork
