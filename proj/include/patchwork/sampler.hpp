#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "patchwork/corpus.hpp"
#include "patchwork/image.hpp"
#include "patchwork/rng.hpp"
#include "patchwork/tensor.hpp"

namespace patchwork {

// The eight neighbor offsets (row, col) in label order:
//   (-1,-1)->0 (-1,0)->1 (-1,1)->2 (0,-1)->3 (0,1)->4 (1,-1)->5 (1,0)->6 (1,1)->7
inline constexpr int kNumRelativeLabels = 8;
int offset_to_label(int drow, int dcol);
std::pair<int, int> label_to_offset(int label);

enum class ColorMode { kProjection, kDrop, kNone };
enum class MeanMode { kPerPatch, kDataset };

const char* color_mode_name(ColorMode m);
ColorMode color_mode_from_name(const std::string& name);
const char* mean_mode_name(MeanMode m);
MeanMode mean_mode_from_name(const std::string& name);

struct SamplerConfig {
  int patch_size = 96;
  int gap = 48;  // kept near patch_size / 2 by default
  int jitter = 7;
  ColorMode color_mode = ColorMode::kProjection;
  double pixelation_prob = 0.25;
  int pixelation_min_px = 100;
  MeanMode mean_mode = MeanMode::kPerPatch;
  std::array<double, 3> dataset_mean = {0.0, 0.0, 0.0};
};

struct GridCell {
  int row = 0, col = 0;  // grid coordinates
  int y = 0, x = 0;      // jittered top-left pixel
};

struct GridGeometry {
  int rows = 0, cols = 0;
  int pitch = 0;  // patch_size + gap
  int margin_y = 0, margin_x = 0;
};

// Geometry of the centered patch grid; requires at least min_cells cells per
// axis, otherwise reports the minimum image size that would fit.
GridGeometry grid_geometry(int width, int height, const SamplerConfig& cfg, int min_cells);

// Jittered cell positions in row-major order; pair sampling needs a 2x2 grid.
std::vector<GridCell> grid_positions(const ImageBuffer& img, const SamplerConfig& cfg, Rng& rng);
// Same, but a single cell suffices (absolute-position training, baselines).
std::vector<GridCell> single_positions(const ImageBuffer& img, const SamplerConfig& cfg, Rng& rng);

// [3, size, size] f64 crop; the window must lie inside the image.
Tensor crop_patch(const ImageBuffer& img, int y, int x, int size);

// Green-magenta annihilating projection, rows x columns.
extern const double kColorProjection[3][3];
void apply_color_projection(Tensor& patch);

// Keeps one uniformly chosen channel; the other two are replaced by
// mean(kept) + (std(kept) / 100) * gaussian noise.
void apply_color_drop(Tensor& patch, Rng& rng);

// Downsamples to ~target_px pixels and back up, both bilinear.
void pixelate(Tensor& patch, int target_px);

void subtract_mean(Tensor& patch, MeanMode mode, const std::array<double, 3>& dataset_mean);

// Full anti-shortcut chain: color handling, optional pixelation, then mean
// subtraction.
void preprocess_patch(Tensor& patch, const SamplerConfig& cfg, Rng& rng);

struct PatchPair {
  Tensor patch_a, patch_b;
  int label = 0;
  std::string source_image;
  int row_a = 0, col_a = 0;
};

PatchPair sample_pair(const ImageBuffer& img, const std::string& image_id,
                      const SamplerConfig& cfg, Rng& rng);

// Like sample_pair but with a caller-chosen relative label; used to build
// exactly label-balanced evaluation sets.
PatchPair sample_pair_with_label(const ImageBuffer& img, const std::string& image_id,
                                 const SamplerConfig& cfg, int label, Rng& rng);

// Mean over all pixels of every corpus image, per channel.
std::array<double, 3> compute_dataset_mean(const CorpusManifest& manifest);

// Binary pair record: u32 id length, id bytes, u8 label, then both patches
// as little-endian f32 in CHW order.
void write_pair_record(std::ostream& out, const PatchPair& pair);
PatchPair read_pair_record(std::istream& in, int patch_size);

}  // namespace patchwork
