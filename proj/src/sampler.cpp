#include "patchwork/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include "patchwork/errors.hpp"

namespace patchwork {

namespace {
constexpr int kOffsets[kNumRelativeLabels][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                                                 {0, 1},   {1, -1}, {1, 0},  {1, 1}};
}

int offset_to_label(int drow, int dcol) {
  for (int i = 0; i < kNumRelativeLabels; ++i) {
    if (kOffsets[i][0] == drow && kOffsets[i][1] == dcol) return i;
  }
  throw ConfigError("no relative-position label for offset (" + std::to_string(drow) + ", " +
                    std::to_string(dcol) + ")");
}

std::pair<int, int> label_to_offset(int label) {
  if (label < 0 || label >= kNumRelativeLabels) {
    throw ConfigError("relative-position label out of range: " + std::to_string(label));
  }
  return {kOffsets[label][0], kOffsets[label][1]};
}

const char* color_mode_name(ColorMode m) {
  switch (m) {
    case ColorMode::kProjection: return "projection";
    case ColorMode::kDrop: return "drop";
    case ColorMode::kNone: return "none";
  }
  return "none";
}

ColorMode color_mode_from_name(const std::string& name) {
  if (name == "projection") return ColorMode::kProjection;
  if (name == "drop") return ColorMode::kDrop;
  if (name == "none") return ColorMode::kNone;
  throw ConfigError("unknown color_mode '" + name + "' (projection|drop|none)");
}

const char* mean_mode_name(MeanMode m) {
  return m == MeanMode::kPerPatch ? "per_patch" : "dataset";
}

MeanMode mean_mode_from_name(const std::string& name) {
  if (name == "per_patch") return MeanMode::kPerPatch;
  if (name == "dataset") return MeanMode::kDataset;
  throw ConfigError("unknown mean_mode '" + name + "' (per_patch|dataset)");
}

GridGeometry grid_geometry(int width, int height, const SamplerConfig& cfg, int min_cells) {
  if (cfg.patch_size <= 0 || cfg.gap < 0 || cfg.jitter < 0) {
    throw ConfigError("sampler needs patch_size >= 1, gap >= 0, jitter >= 0");
  }
  GridGeometry g;
  g.pitch = cfg.patch_size + cfg.gap;
  g.cols = width >= cfg.patch_size ? (width - cfg.patch_size) / g.pitch + 1 : 0;
  g.rows = height >= cfg.patch_size ? (height - cfg.patch_size) / g.pitch + 1 : 0;
  if (g.cols < min_cells || g.rows < min_cells) {
    const int need = cfg.patch_size + (min_cells - 1) * g.pitch;
    throw IoError(IoErrorKind::kImageTooSmall,
                  "image " + std::to_string(width) + "x" + std::to_string(height) +
                      " too small for a " + std::to_string(min_cells) + "x" +
                      std::to_string(min_cells) + " grid of " + std::to_string(cfg.patch_size) +
                      "px patches with " + std::to_string(cfg.gap) + "px gap; need at least " +
                      std::to_string(need) + "x" + std::to_string(need));
  }
  g.margin_x = std::max(0, (width - g.cols * g.pitch) / 2);
  g.margin_y = std::max(0, (height - g.rows * g.pitch) / 2);
  return g;
}

namespace {

std::vector<GridCell> positions_impl(const ImageBuffer& img, const SamplerConfig& cfg, Rng& rng,
                                     int min_cells) {
  const GridGeometry g = grid_geometry(img.width, img.height, cfg, min_cells);
  std::vector<GridCell> cells;
  cells.reserve(static_cast<size_t>(g.rows) * g.cols);
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) {
      GridCell cell;
      cell.row = r;
      cell.col = c;
      int y0 = g.margin_y + r * g.pitch;
      int x0 = g.margin_x + c * g.pitch;
      int dy = cfg.jitter > 0 ? static_cast<int>(rng.uniform_int(-cfg.jitter, cfg.jitter)) : 0;
      int dx = cfg.jitter > 0 ? static_cast<int>(rng.uniform_int(-cfg.jitter, cfg.jitter)) : 0;
      cell.y = std::clamp(y0 + dy, 0, img.height - cfg.patch_size);
      cell.x = std::clamp(x0 + dx, 0, img.width - cfg.patch_size);
      cells.push_back(cell);
    }
  }
  return cells;
}

}  // namespace

std::vector<GridCell> grid_positions(const ImageBuffer& img, const SamplerConfig& cfg, Rng& rng) {
  return positions_impl(img, cfg, rng, 2);
}

std::vector<GridCell> single_positions(const ImageBuffer& img, const SamplerConfig& cfg, Rng& rng) {
  return positions_impl(img, cfg, rng, 1);
}

Tensor crop_patch(const ImageBuffer& img, int y, int x, int size) {
  if (y < 0 || x < 0 || y + size > img.height || x + size > img.width) {
    throw ConfigError("crop window " + std::to_string(size) + "px at (" + std::to_string(y) +
                      ", " + std::to_string(x) + ") exceeds image " + std::to_string(img.width) +
                      "x" + std::to_string(img.height));
  }
  Tensor t({3, size, size});
  double* p = t.ptr();
  for (int c = 0; c < 3; ++c) {
    for (int dy = 0; dy < size; ++dy) {
      for (int dx = 0; dx < size; ++dx) {
        *p++ = img.at(y + dy, x + dx, c);
      }
    }
  }
  return t;
}

// I - a^T a / (a a^T) with a = [-1, 2, -1]: kills the green-magenta axis,
// keeps luminance and the red-blue axis.
const double kColorProjection[3][3] = {{5.0 / 6, 1.0 / 3, -1.0 / 6},
                                       {1.0 / 3, 1.0 / 3, 1.0 / 3},
                                       {-1.0 / 6, 1.0 / 3, 5.0 / 6}};

void apply_color_projection(Tensor& patch) {
  const int64_t plane = patch.dim(1) * patch.dim(2);
  double* r = patch.ptr();
  double* g = r + plane;
  double* b = g + plane;
  for (int64_t i = 0; i < plane; ++i) {
    double v0 = r[i], v1 = g[i], v2 = b[i];
    r[i] = kColorProjection[0][0] * v0 + kColorProjection[0][1] * v1 + kColorProjection[0][2] * v2;
    g[i] = kColorProjection[1][0] * v0 + kColorProjection[1][1] * v1 + kColorProjection[1][2] * v2;
    b[i] = kColorProjection[2][0] * v0 + kColorProjection[2][1] * v1 + kColorProjection[2][2] * v2;
  }
}

void apply_color_drop(Tensor& patch, Rng& rng) {
  const int64_t plane = patch.dim(1) * patch.dim(2);
  const int keep = static_cast<int>(rng.next_below(3));
  const double* kp = patch.ptr() + keep * plane;
  double sum = 0.0, sum2 = 0.0;
  for (int64_t i = 0; i < plane; ++i) {
    sum += kp[i];
    sum2 += kp[i] * kp[i];
  }
  const double mean = sum / static_cast<double>(plane);
  const double var = std::max(0.0, sum2 / static_cast<double>(plane) - mean * mean);
  const double sigma = std::sqrt(var) / 100.0;
  for (int c = 0; c < 3; ++c) {
    if (c == keep) continue;
    double* cp = patch.ptr() + c * plane;
    for (int64_t i = 0; i < plane; ++i) cp[i] = mean + sigma * rng.normal();
  }
}

namespace {

// Bilinear plane resample, same half-pixel convention as image resizing.
void resample_plane(const double* src, int sw, int sh, double* dst, int dw, int dh) {
  const double sx = static_cast<double>(sw) / dw;
  const double sy = static_cast<double>(sh) / dh;
  for (int y = 0; y < dh; ++y) {
    double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(sh - 1));
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, sh - 1);
    double wy = fy - y0;
    for (int x = 0; x < dw; ++x) {
      double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(sw - 1));
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, sw - 1);
      double wx = fx - x0;
      double top = src[y0 * sw + x0] * (1 - wx) + src[y0 * sw + x1] * wx;
      double bot = src[y1 * sw + x0] * (1 - wx) + src[y1 * sw + x1] * wx;
      dst[y * dw + x] = top * (1 - wy) + bot * wy;
    }
  }
}

}  // namespace

void pixelate(Tensor& patch, int target_px) {
  const int size = static_cast<int>(patch.dim(1));
  const int64_t plane = static_cast<int64_t>(size) * size;
  target_px = std::clamp(target_px, 1, static_cast<int>(plane));
  const int side = std::clamp(static_cast<int>(std::llround(std::sqrt(static_cast<double>(target_px)))),
                              1, size);
  std::vector<double> down(static_cast<size_t>(side) * side);
  std::vector<double> up(static_cast<size_t>(plane));
  for (int c = 0; c < 3; ++c) {
    double* cp = patch.ptr() + c * plane;
    resample_plane(cp, size, size, down.data(), side, side);
    resample_plane(down.data(), side, side, up.data(), size, size);
    std::copy(up.begin(), up.end(), cp);
  }
}

void subtract_mean(Tensor& patch, MeanMode mode, const std::array<double, 3>& dataset_mean) {
  const int64_t plane = patch.dim(1) * patch.dim(2);
  for (int c = 0; c < 3; ++c) {
    double* cp = patch.ptr() + c * plane;
    double m;
    if (mode == MeanMode::kPerPatch) {
      double sum = 0.0;
      for (int64_t i = 0; i < plane; ++i) sum += cp[i];
      m = sum / static_cast<double>(plane);
    } else {
      m = dataset_mean[static_cast<size_t>(c)];
    }
    for (int64_t i = 0; i < plane; ++i) cp[i] -= m;
  }
}

void preprocess_patch(Tensor& patch, const SamplerConfig& cfg, Rng& rng) {
  switch (cfg.color_mode) {
    case ColorMode::kProjection: apply_color_projection(patch); break;
    case ColorMode::kDrop: apply_color_drop(patch, rng); break;
    case ColorMode::kNone: break;
  }
  if (cfg.pixelation_prob > 0.0 && rng.uniform() < cfg.pixelation_prob) {
    const int max_px = cfg.patch_size * cfg.patch_size;
    const int lo = std::min(cfg.pixelation_min_px, max_px);
    const int target = static_cast<int>(rng.uniform_int(lo, max_px));
    pixelate(patch, target);
  }
  subtract_mean(patch, cfg.mean_mode, cfg.dataset_mean);
}

namespace {

PatchPair finish_pair(const ImageBuffer& img, const std::string& image_id,
                      const SamplerConfig& cfg, const std::vector<GridCell>& cells,
                      const GridGeometry& g, int cell_idx, int label, Rng& rng) {
  const GridCell& a = cells[static_cast<size_t>(cell_idx)];
  auto [dr, dc] = label_to_offset(label);
  const GridCell& b = cells[static_cast<size_t>((a.row + dr) * g.cols + (a.col + dc))];
  PatchPair pair;
  pair.source_image = image_id;
  pair.label = label;
  pair.row_a = a.row;
  pair.col_a = a.col;
  pair.patch_a = crop_patch(img, a.y, a.x, cfg.patch_size);
  pair.patch_b = crop_patch(img, b.y, b.x, cfg.patch_size);
  preprocess_patch(pair.patch_a, cfg, rng);
  preprocess_patch(pair.patch_b, cfg, rng);
  return pair;
}

}  // namespace

PatchPair sample_pair(const ImageBuffer& img, const std::string& image_id,
                      const SamplerConfig& cfg, Rng& rng) {
  const GridGeometry g = grid_geometry(img.width, img.height, cfg, 2);
  const std::vector<GridCell> cells = positions_impl(img, cfg, rng, 2);
  const int cell_idx = static_cast<int>(rng.next_below(static_cast<uint64_t>(g.rows) * g.cols));
  const GridCell& a = cells[static_cast<size_t>(cell_idx)];
  int valid[kNumRelativeLabels];
  int n_valid = 0;
  for (int label = 0; label < kNumRelativeLabels; ++label) {
    int r2 = a.row + kOffsets[label][0];
    int c2 = a.col + kOffsets[label][1];
    if (r2 >= 0 && r2 < g.rows && c2 >= 0 && c2 < g.cols) valid[n_valid++] = label;
  }
  const int label = valid[rng.next_below(static_cast<uint64_t>(n_valid))];
  return finish_pair(img, image_id, cfg, cells, g, cell_idx, label, rng);
}

PatchPair sample_pair_with_label(const ImageBuffer& img, const std::string& image_id,
                                 const SamplerConfig& cfg, int label, Rng& rng) {
  auto [dr, dc] = label_to_offset(label);
  const GridGeometry g = grid_geometry(img.width, img.height, cfg, 2);
  const std::vector<GridCell> cells = positions_impl(img, cfg, rng, 2);
  std::vector<int> candidates;
  for (const GridCell& cell : cells) {
    int r2 = cell.row + dr;
    int c2 = cell.col + dc;
    if (r2 >= 0 && r2 < g.rows && c2 >= 0 && c2 < g.cols) {
      candidates.push_back(cell.row * g.cols + cell.col);
    }
  }
  const int cell_idx = candidates[rng.next_below(candidates.size())];
  return finish_pair(img, image_id, cfg, cells, g, cell_idx, label, rng);
}

std::array<double, 3> compute_dataset_mean(const CorpusManifest& manifest) {
  if (manifest.entries.empty()) throw ConfigError("dataset mean of an empty manifest");
  double sum[3] = {0, 0, 0};
  double count = 0;
  for (const auto& e : manifest.entries) {
    ImageBuffer img = load_image(manifest.resolve_path(e));
    const float* p = img.data.data();
    const int64_t px = img.pixels();
    for (int64_t i = 0; i < px; ++i) {
      sum[0] += p[0];
      sum[1] += p[1];
      sum[2] += p[2];
      p += 3;
    }
    count += static_cast<double>(px);
  }
  return {sum[0] / count, sum[1] / count, sum[2] / count};
}

namespace {

template <typename T>
void write_raw(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void read_raw(std::istream& in, T& v, const char* what) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError(IoErrorKind::kCorruptPayload, std::string("truncated pair record: ") + what);
}

void write_patch_f32(std::ostream& out, const Tensor& t) {
  for (double v : t.data) {
    auto f = static_cast<float>(v);
    write_raw(out, f);
  }
}

}  // namespace

void write_pair_record(std::ostream& out, const PatchPair& pair) {
  auto len = static_cast<uint32_t>(pair.source_image.size());
  write_raw(out, len);
  out.write(pair.source_image.data(), static_cast<std::streamsize>(len));
  auto label = static_cast<uint8_t>(pair.label);
  write_raw(out, label);
  write_patch_f32(out, pair.patch_a);
  write_patch_f32(out, pair.patch_b);
}

PatchPair read_pair_record(std::istream& in, int patch_size) {
  PatchPair pair;
  uint32_t len = 0;
  read_raw(in, len, "id length");
  pair.source_image.resize(len);
  in.read(pair.source_image.data(), len);
  if (!in) throw IoError(IoErrorKind::kCorruptPayload, "truncated pair record: id bytes");
  uint8_t label = 0;
  read_raw(in, label, "label");
  if (label >= kNumRelativeLabels) {
    throw IoError(IoErrorKind::kCorruptPayload,
                  "pair record label out of range: " + std::to_string(int(label)));
  }
  pair.label = label;
  for (Tensor* t : {&pair.patch_a, &pair.patch_b}) {
    *t = Tensor({3, patch_size, patch_size});
    for (double& v : t->data) {
      float f = 0.f;
      read_raw(in, f, "patch payload");
      v = f;
    }
  }
  return pair;
}

}  // namespace patchwork
