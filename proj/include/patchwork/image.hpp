#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace patchwork {

// Interleaved RGB float image, values in [0, 1], row-major.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<float> data;  // height * width * 3

  ImageBuffer() = default;
  ImageBuffer(int w, int h) : width(w), height(h), data(static_cast<size_t>(w) * h * 3, 0.f) {}

  float& at(int y, int x, int c) {
    return data[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  float at(int y, int x, int c) const {
    return data[(static_cast<size_t>(y) * width + x) * 3 + c];
  }
  int64_t pixels() const { return static_cast<int64_t>(width) * height; }
};

// Decodes a PNG or binary PPM (P6, maxval 255) file, sniffing the magic
// bytes. Grayscale PNGs are expanded by channel replication.
ImageBuffer load_image(const std::string& path);

void save_png(const ImageBuffer& img, const std::string& path);
void save_ppm(const ImageBuffer& img, const std::string& path);

// Bilinear resample with half-pixel centers and edge clamping.
ImageBuffer resize_bilinear(const ImageBuffer& img, int out_w, int out_h);

// Uniformly rescales so the pixel count lands at the nearest budget bound,
// preserving aspect ratio to within one pixel of rounding. Images already
// inside [min_px, max_px] pass through untouched. A required upscale factor
// above max_scale signals degenerate input.
ImageBuffer resize_to_budget(const ImageBuffer& img, int64_t min_px, int64_t max_px,
                             double max_scale = 8.0);

}  // namespace patchwork
