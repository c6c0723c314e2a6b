#pragma once

#include <array>
#include <string>
#include <vector>

#include "patchwork/corpus.hpp"
#include "patchwork/mining.hpp"
#include "patchwork/sampler.hpp"

namespace patchwork {

// Context anchors from the reference results this pipeline miniaturizes.
// Desk-scale runs are not expected to reproduce them; reports carry them so
// numbers can be read side by side.
struct ReferenceAnchors {
  static constexpr double kChanceAccuracy = 0.125;
  static constexpr double kPretextAccuracy = 0.384;
  static constexpr double kAbsLocRmseRaw = 0.255;
  static constexpr double kAbsLocRmseChance = 0.371;
  static constexpr double kAbsLocRmseProjected = 0.321;
};

struct EvalSet {
  std::vector<std::string> images;  // exactly 10
  std::string dominant_category;
  double purity = 0.0;  // dominant count / 10
};

// Computes dominant category (ties pick the lexicographically smallest) and
// purity for a 10-image set; every id must resolve in the manifest.
EvalSet make_eval_set(const std::vector<std::string>& images, const CorpusManifest& manifest);

struct CurvePoint {
  double coverage = 0.0;    // covered images / manifest size
  double avg_purity = 0.0;  // mean purity of the prefix
  double set_purity = 0.0;
  std::string dominant_category;
};

struct PurityCoverageCurve {
  std::vector<CurvePoint> points;
  double auc = 0.0;
  double auc_at_half = 0.0;  // same area, coverage clipped to 0.5
};

// Walks sets in the given order (expected purity-descending), accumulating
// the union of covered images. The area treats the first point as a
// rectangle from zero coverage and trapezoids afterwards.
PurityCoverageCurve purity_coverage(const std::vector<EvalSet>& ranked_sets,
                                    const CorpusManifest& manifest);

struct PretextReport {
  int n_pairs = 0;
  double accuracy = 0.0;
  std::array<std::array<int, kNumRelativeLabels>, kNumRelativeLabels> confusion{};  // [true][pred]
  std::array<double, kNumRelativeLabels> per_class_accuracy{};
  std::string checkpoint_hash;
  uint64_t seed = 0;
};

// Relative-position accuracy of a pair-classifier checkpoint on freshly
// sampled pairs. balanced draws the same number of pairs per label.
PretextReport pretext_accuracy(const std::string& ckpt_path, const CorpusManifest& manifest,
                               int n_images, int pairs_per_image, uint64_t seed, bool balanced);

// Monte-Carlo RMSE of the constant (0.5, 0.5) predictor over the sampler's
// patch-center distribution on this corpus; n_samples >= 1000.
double chance_rmse(const CorpusManifest& manifest, const SamplerConfig& cfg, int n_samples,
                   uint64_t seed);

// RMSE of a constant predictor against explicit normalized centers; the
// closed-form check for uniform centers lives on top of this.
double rmse_of_constant(const std::vector<std::array<double, 2>>& centers, double px, double py);

struct RmseReport {
  double overall = 0.0;     // mean of per-image RMSE
  double top_decile = 0.0;  // mean of the best 10% of images
  std::vector<std::pair<std::string, double>> per_image;  // sorted ascending by RMSE
  std::string checkpoint_hash;
  uint64_t seed = 0;
};

// Per-image position-prediction RMSE of an absolute-position checkpoint.
RmseReport rmse_report(const std::string& ckpt_path, const CorpusManifest& manifest,
                       int patches_per_image, uint64_t seed);

// Aggregation used by rmse_report, exposed for direct verification.
void rmse_aggregate(RmseReport& report);

}  // namespace patchwork
