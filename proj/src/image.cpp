#include "patchwork/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "patchwork/errors.hpp"

namespace patchwork {

namespace {

uint8_t to_byte(float v) {
  float c = std::clamp(v, 0.f, 1.f);
  return static_cast<uint8_t>(std::lround(c * 255.f));
}

ImageBuffer load_png_file(const std::string& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw IoError(IoErrorKind::kCorruptPayload,
                  "failed to parse PNG header of " + path + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<uint8_t> raw(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, raw.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw IoError(IoErrorKind::kCorruptPayload,
                  "failed to decode PNG payload of " + path + ": " + msg);
  }
  ImageBuffer img(static_cast<int>(png.width), static_cast<int>(png.height));
  const float inv = 1.f / 255.f;
  for (size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] * inv;
  return img;
}

void skip_ppm_space(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

ImageBuffer load_ppm_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::kMissingFile, "cannot open " + path);
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '6') {
    throw IoError(IoErrorKind::kUnsupportedFormat, path + " is not a binary PPM (P6)");
  }
  int w = 0, h = 0, maxval = 0;
  skip_ppm_space(in);
  in >> w;
  skip_ppm_space(in);
  in >> h;
  skip_ppm_space(in);
  in >> maxval;
  if (!in || w <= 0 || h <= 0) {
    throw IoError(IoErrorKind::kCorruptPayload, "bad PPM header in " + path);
  }
  if (maxval != 255) {
    throw IoError(IoErrorKind::kUnsupportedFormat,
                  path + ": only maxval 255 PPM is supported");
  }
  in.get();  // single whitespace after maxval
  std::vector<uint8_t> raw(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(in.gcount()) != raw.size()) {
    throw IoError(IoErrorKind::kCorruptPayload,
                  path + ": truncated PPM payload (expected " + std::to_string(raw.size()) +
                      " bytes, got " + std::to_string(in.gcount()) + ")");
  }
  ImageBuffer img(w, h);
  const float inv = 1.f / 255.f;
  for (size_t i = 0; i < raw.size(); ++i) img.data[i] = raw[i] * inv;
  return img;
}

}  // namespace

ImageBuffer load_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw IoError(IoErrorKind::kMissingFile, "cannot open " + path);
  unsigned char magic[8] = {0};
  probe.read(reinterpret_cast<char*>(magic), 8);
  probe.close();
  static const unsigned char png_sig[8] = {0x89, 'P', 'N', 'G', 0x0D, 0x0A, 0x1A, 0x0A};
  if (std::memcmp(magic, png_sig, 8) == 0) return load_png_file(path);
  if (magic[0] == 'P' && magic[1] == '6') return load_ppm_file(path);
  throw IoError(IoErrorKind::kUnsupportedFormat,
                path + ": unrecognized image format (expect PNG or binary PPM)");
}

void save_png(const ImageBuffer& img, const std::string& path) {
  std::vector<uint8_t> raw(img.data.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(img.data[i]);
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, raw.data(), 0, nullptr)) {
    throw IoError(IoErrorKind::kUnwritable,
                  "failed to write PNG " + path + ": " + png.message);
  }
}

void save_ppm(const ImageBuffer& img, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrorKind::kUnwritable, "cannot write " + path);
  out << "P6\n" << img.width << " " << img.height << "\n255\n";
  std::vector<uint8_t> raw(img.data.size());
  for (size_t i = 0; i < raw.size(); ++i) raw[i] = to_byte(img.data[i]);
  out.write(reinterpret_cast<const char*>(raw.data()),
            static_cast<std::streamsize>(raw.size()));
  if (!out) throw IoError(IoErrorKind::kUnwritable, "short write to " + path);
}

ImageBuffer resize_bilinear(const ImageBuffer& img, int out_w, int out_h) {
  if (out_w <= 0 || out_h <= 0) {
    throw ConfigError("resize target must be positive, got " + std::to_string(out_w) + "x" +
                      std::to_string(out_h));
  }
  ImageBuffer out(out_w, out_h);
  const double sx = static_cast<double>(img.width) / out_w;
  const double sy = static_cast<double>(img.height) / out_h;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, img.height - 1);
    double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, img.width - 1);
      double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        double top = img.at(y0, x0, c) * (1.0 - wx) + img.at(y0, x1, c) * wx;
        double bot = img.at(y1, x0, c) * (1.0 - wx) + img.at(y1, x1, c) * wx;
        out.at(y, x, c) = static_cast<float>(top * (1.0 - wy) + bot * wy);
      }
    }
  }
  return out;
}

ImageBuffer resize_to_budget(const ImageBuffer& img, int64_t min_px, int64_t max_px,
                             double max_scale) {
  if (min_px <= 0 || max_px < min_px) {
    throw ConfigError("bad pixel budget [" + std::to_string(min_px) + ", " +
                      std::to_string(max_px) + "]");
  }
  const int64_t px = img.pixels();
  if (px == 0) throw IoError(IoErrorKind::kDegenerateInput, "empty image");
  if (px >= min_px && px <= max_px) return img;
  const int64_t target = px > max_px ? max_px : min_px;
  const double scale = std::sqrt(static_cast<double>(target) / static_cast<double>(px));
  if (scale > max_scale) {
    throw IoError(IoErrorKind::kDegenerateInput,
                  "image of " + std::to_string(px) + " px would need a " +
                      std::to_string(scale) + "x upscale to reach " + std::to_string(target) +
                      " px (limit " + std::to_string(max_scale) + "x)");
  }
  const int out_w = std::max<int64_t>(1, static_cast<int64_t>(std::floor(img.width * scale)));
  const int out_h = std::max<int64_t>(1, static_cast<int64_t>(std::floor(img.height * scale)));
  return resize_bilinear(img, static_cast<int>(out_w), static_cast<int>(out_h));
}

}  // namespace patchwork
