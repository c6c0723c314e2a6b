#pragma once

#include <array>
#include <string>
#include <vector>

#include "patchwork/corpus.hpp"
#include "patchwork/embed.hpp"

namespace patchwork {

struct SquareFit {
  double cx = 0.0, cy = 0.0;
  double side = 0.0;
  double normalized_error = 0.0;  // sum of squared residuals / side^2
  bool verified = false;          // normalized_error < 1
};

// Least-squares fit of an axis-aligned square model c + s * d_i to four
// points given in (x, y) order TL, TR, BL, BR with y growing downward.
// The scale is clamped to [2/3, 4/3] of avg_side. Four identical points are
// degenerate: error +inf, unverified.
SquareFit fit_square(const std::array<std::array<double, 2>, 4>& points_xy, double avg_side);

struct ConstellationRole {
  int y = 0, x = 0, size = 0;
};

struct ClusterMatch {
  std::string image_id;
  std::array<std::array<double, 2>, 4> centers;  // TL, TR, BL, BR in (x, y)
  double score = 0.0;                            // sum of the 4 best correlations
  double normalized_error = 0.0;
  bool verified = false;
};

struct ClusterRecord {
  std::string seed_image;
  std::array<ConstellationRole, 4> roles;  // TL, TR, BL, BR
  std::vector<ClusterMatch> matches;       // descending score
  int verify_count = 0;
};

struct MiningConfig {
  int n_seeds = 512;
  int top_k = 100;
  uint64_t seed = 0;
};

// Seeds 2x2 constellations of touching patches, scores every other image by
// the sum of each role's best correlation, fits a square to the four best
// centers of the top_k images, and ranks records by verify_count.
std::vector<ClusterRecord> mine_constellations(const EmbeddingTable& table,
                                               const CorpusManifest& manifest,
                                               const MiningConfig& cfg);

void save_clusters(const std::string& path, const std::vector<ClusterRecord>& records);
std::vector<ClusterRecord> load_clusters(const std::string& path);

struct SelectedSet {
  int order = 0;  // position in the selection sequence
  std::string seed_image;
  int verify_count = 0;
  std::vector<std::string> images;  // the 10 best verified matches
};

// Greedy coverage selection: walk records in rank order and take a cluster
// when its 10-image set still contains an image seen fewer than t times,
// raising the target t once a pass adds nothing. Clusters with fewer than 10
// verified matches are never eligible.
std::vector<SelectedSet> select_clusters(const std::vector<ClusterRecord>& records,
                                         const CorpusManifest& manifest, int n_sets);

void save_selection(const std::string& path, const std::vector<SelectedSet>& sets);
std::vector<SelectedSet> load_selection(const std::string& path);

}  // namespace patchwork
