#include "patchwork/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "patchwork/errors.hpp"
#include "patchwork/rng.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace patchwork {

const ManifestEntry* CorpusManifest::find(const std::string& image_id) const {
  auto it = index_.find(image_id);
  return it == index_.end() ? nullptr : &entries[static_cast<size_t>(it->second)];
}

int CorpusManifest::index_of(const std::string& image_id) const {
  auto it = index_.find(image_id);
  return it == index_.end() ? -1 : it->second;
}

std::string CorpusManifest::resolve_path(const ManifestEntry& e) const {
  if (base_dir.empty()) return e.path;
  return (fs::path(base_dir) / e.path).string();
}

void CorpusManifest::rebuild_index() {
  index_.clear();
  for (size_t i = 0; i < entries.size(); ++i) index_[entries[i].image_id] = static_cast<int>(i);
}

CorpusManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::kMissingFile, "cannot open manifest " + path);
  CorpusManifest m;
  m.base_dir = fs::path(path).parent_path().string();
  std::string line;
  int lineno = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(IoErrorKind::kCorruptPayload,
                    path + ":" + std::to_string(lineno) + ": bad JSON: " + e.what());
    }
    if (!saw_header) {
      if (!j.contains("seed")) {
        throw IoError(IoErrorKind::kCorruptPayload,
                      path + ": first line must be the {\"seed\": ...} header");
      }
      m.seed = j.at("seed").get<uint64_t>();
      saw_header = true;
      continue;
    }
    try {
      ManifestEntry e;
      e.image_id = j.at("image_id").get<std::string>();
      e.path = j.at("path").get<std::string>();
      e.width = j.at("width").get<int>();
      e.height = j.at("height").get<int>();
      e.category = j.value("category", "");
      m.entries.push_back(std::move(e));
    } catch (const json::exception& e) {
      throw IoError(IoErrorKind::kCorruptPayload,
                    path + ":" + std::to_string(lineno) + ": bad manifest entry: " + e.what());
    }
  }
  if (!saw_header) {
    throw IoError(IoErrorKind::kCorruptPayload, path + ": empty manifest");
  }
  m.rebuild_index();
  return m;
}

void save_manifest(const CorpusManifest& manifest, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorKind::kUnwritable, "cannot write manifest " + path);
  out << json{{"seed", manifest.seed}}.dump() << "\n";
  for (const auto& e : manifest.entries) {
    json j{{"image_id", e.image_id},
           {"path", e.path},
           {"width", e.width},
           {"height", e.height},
           {"category", e.category}};
    out << j.dump() << "\n";
  }
  if (!out) throw IoError(IoErrorKind::kUnwritable, "short write to " + path);
}

void apply_green_aberration(ImageBuffer& img, double green_scale) {
  if (green_scale < 0.9 || green_scale > 1.0) {
    throw ConfigError("green_scale must lie in [0.9, 1.0], got " + std::to_string(green_scale));
  }
  const double cx = (img.width - 1) / 2.0;
  const double cy = (img.height - 1) / 2.0;
  std::vector<float> green(static_cast<size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      double sx = cx + (x - cx) * green_scale;
      double sy = cy + (y - cy) * green_scale;
      sx = std::clamp(sx, 0.0, static_cast<double>(img.width - 1));
      sy = std::clamp(sy, 0.0, static_cast<double>(img.height - 1));
      int x0 = static_cast<int>(sx);
      int y0 = static_cast<int>(sy);
      int x1 = std::min(x0 + 1, img.width - 1);
      int y1 = std::min(y0 + 1, img.height - 1);
      double wx = sx - x0;
      double wy = sy - y0;
      double top = img.at(y0, x0, 1) * (1.0 - wx) + img.at(y0, x1, 1) * wx;
      double bot = img.at(y1, x0, 1) * (1.0 - wx) + img.at(y1, x1, 1) * wx;
      green[static_cast<size_t>(y) * img.width + x] = static_cast<float>(top * (1.0 - wy) + bot * wy);
    }
  }
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      img.at(y, x, 1) = green[static_cast<size_t>(y) * img.width + x];
    }
  }
}

const std::vector<std::string>& structured_categories() {
  static const std::vector<std::string> cats = {"alder", "birch", "cedar",
                                                "fir",   "maple", "spruce"};
  return cats;
}

namespace {

constexpr int kCells = 4;                // cell grid per object side
constexpr int kPaletteSize = 16;         // 4 luminance x 4 red-blue values
constexpr double kLumTable[4] = {0.30, 0.45, 0.60, 0.75};
constexpr double kRbTable[4] = {-0.21, -0.07, 0.07, 0.21};
constexpr double kAngleTable[4] = {0.0, M_PI / 4, M_PI / 2, 3 * M_PI / 4};
constexpr double kPeriodFrac[4] = {1.0 / 24, 1.0 / 16, 1.0 / 12, 1.0 / 8};
constexpr double kStripeAmp = 0.10;
constexpr double kFineNoiseAmp = 0.05;
constexpr int kLatticeStep = 24;
constexpr double kLatticeAmp = 0.10;
constexpr double kBgBase = 0.45;
constexpr double kBorderPx = 2.5;
constexpr double kBorderLum = 0.12;

struct CategoryLook {
  std::array<int, 16> palette_perm;  // cell index -> palette entry
  std::array<int, 16> stripe_perm;   // cell index -> stripe pattern
  double tint_rb;                    // category shift along the red-blue axis
};

std::array<int, 16> shuffled_identity(uint64_t seed) {
  std::array<int, 16> p;
  for (int i = 0; i < 16; ++i) p[static_cast<size_t>(i)] = i;
  Rng rng(seed);
  for (int i = 15; i > 0; --i) {
    int j = static_cast<int>(rng.next_below(static_cast<uint64_t>(i + 1)));
    std::swap(p[static_cast<size_t>(i)], p[static_cast<size_t>(j)]);
  }
  return p;
}

const std::vector<CategoryLook>& category_looks() {
  static const std::vector<CategoryLook> looks = [] {
    std::vector<CategoryLook> out;
    const size_t n = structured_categories().size();
    for (size_t c = 0; c < n; ++c) {
      CategoryLook look;
      look.palette_perm = shuffled_identity(derive_seed(0x5EEDC0DEull, c, 1));
      look.stripe_perm = shuffled_identity(derive_seed(0x5EEDC0DEull, c, 2));
      look.tint_rb = -0.10 + 0.04 * static_cast<double>(c);
      out.push_back(look);
    }
    return out;
  }();
  return looks;
}

struct SceneObject {
  int x0, y0, side;
};

ImageBuffer render_structured(Rng& rng, const SynthOptions& opt, std::string* category_out) {
  const int w = static_cast<int>(rng.uniform_int(opt.min_side, opt.max_side));
  const int h = static_cast<int>(rng.uniform_int(opt.min_side, opt.max_side));
  const auto& cats = structured_categories();
  const int cat = static_cast<int>(rng.next_below(cats.size()));
  *category_out = cats[static_cast<size_t>(cat)];
  const CategoryLook& look = category_looks()[static_cast<size_t>(cat)];

  // Coarse background lattice, shared by all channels.
  const int gw = w / kLatticeStep + 2;
  const int gh = h / kLatticeStep + 2;
  std::vector<double> lattice(static_cast<size_t>(gw) * gh);
  for (double& v : lattice) v = kBgBase + kLatticeAmp * (2.0 * rng.uniform() - 1.0);

  const int n_objects = static_cast<int>(rng.uniform_int(opt.min_objects, opt.max_objects));
  std::vector<SceneObject> objects;
  const int base = std::min(w, h);
  for (int i = 0; i < n_objects; ++i) {
    SceneObject o;
    o.side = static_cast<int>(rng.uniform(opt.min_object_frac, opt.max_object_frac) * base);
    o.x0 = static_cast<int>(rng.uniform_int(4, w - o.side - 4));
    o.y0 = static_cast<int>(rng.uniform_int(4, h - o.side - 4));
    objects.push_back(o);
  }

  ImageBuffer img(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double fine = kFineNoiseAmp * (2.0 * rng.uniform() - 1.0);
      // Topmost object wins; later objects overdraw earlier ones.
      const SceneObject* hit = nullptr;
      for (auto it = objects.rbegin(); it != objects.rend(); ++it) {
        if (x >= it->x0 && x < it->x0 + it->side && y >= it->y0 && y < it->y0 + it->side) {
          hit = &*it;
          break;
        }
      }
      double r, g, b;
      if (hit == nullptr) {
        double fx = static_cast<double>(x) / kLatticeStep;
        double fy = static_cast<double>(y) / kLatticeStep;
        int gx = static_cast<int>(fx);
        int gy = static_cast<int>(fy);
        double wx = fx - gx;
        double wy = fy - gy;
        auto node = [&](int yy, int xx) { return lattice[static_cast<size_t>(yy) * gw + xx]; };
        double v = node(gy, gx) * (1 - wx) * (1 - wy) + node(gy, gx + 1) * wx * (1 - wy) +
                   node(gy + 1, gx) * (1 - wx) * wy + node(gy + 1, gx + 1) * wx * wy;
        r = g = b = v;
      } else {
        const double lx = x - hit->x0 + 0.5;
        const double ly = y - hit->y0 + 0.5;
        const double edge = std::min(std::min(lx, hit->side - lx), std::min(ly, hit->side - ly));
        if (edge < kBorderPx) {
          r = g = b = kBorderLum;
        } else {
          int cj = std::min(kCells - 1, static_cast<int>(lx * kCells / hit->side));
          int ci = std::min(kCells - 1, static_cast<int>(ly * kCells / hit->side));
          int cell = ci * kCells + cj;
          int pal = look.palette_perm[static_cast<size_t>(cell)];
          int pat = look.stripe_perm[static_cast<size_t>(cell)];
          double lum = kLumTable[pal % 4];
          double rb = kRbTable[pal / 4] + look.tint_rb;
          double angle = kAngleTable[pat % 4];
          double period = kPeriodFrac[pat / 4] * hit->side;
          double t = (lx * std::cos(angle) + ly * std::sin(angle)) / period;
          double stripe = std::clamp(1.6 * std::sin(2.0 * M_PI * t), -1.0, 1.0) * kStripeAmp;
          lum += stripe;
          r = lum + 0.5 * rb;
          g = lum;
          b = lum - 0.5 * rb;
        }
      }
      img.at(y, x, 0) = static_cast<float>(std::clamp(r + fine, 0.0, 1.0));
      img.at(y, x, 1) = static_cast<float>(std::clamp(g + fine, 0.0, 1.0));
      img.at(y, x, 2) = static_cast<float>(std::clamp(b + fine, 0.0, 1.0));
    }
  }
  return img;
}

ImageBuffer render_noise(Rng& rng, const SynthOptions& opt) {
  const int w = static_cast<int>(rng.uniform_int(opt.min_side, opt.max_side));
  const int h = static_cast<int>(rng.uniform_int(opt.min_side, opt.max_side));
  ImageBuffer img(w, h);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

CorpusManifest synth_corpus(int n_images, const AberrationSpec& aberration, uint64_t seed,
                            const std::string& out_dir, const SynthOptions& options) {
  if (n_images <= 0) {
    throw ConfigError("synth corpus needs n_images >= 1, got " + std::to_string(n_images));
  }
  if (aberration.enabled && (aberration.green_scale < 0.9 || aberration.green_scale > 1.0)) {
    throw ConfigError("green_scale must lie in [0.9, 1.0], got " +
                      std::to_string(aberration.green_scale));
  }
  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  if (ec) {
    throw IoError(IoErrorKind::kUnwritable,
                  "cannot create output directory " + out_dir + ": " + ec.message());
  }
  CorpusManifest m;
  m.seed = seed;
  m.base_dir = out_dir;
  for (int i = 0; i < n_images; ++i) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(i)));
    std::string category;
    ImageBuffer img;
    if (options.style == SceneStyle::kStructured) {
      img = render_structured(rng, options, &category);
    } else {
      img = render_noise(rng, options);
      category = "noise";
    }
    if (aberration.enabled) apply_green_aberration(img, aberration.green_scale);
    char name[64];
    std::snprintf(name, sizeof(name), "img_%05d", i);
    std::string rel = std::string("images/") + name + ".png";
    save_png(img, (fs::path(out_dir) / rel).string());
    ManifestEntry e;
    e.image_id = name;
    e.path = rel;
    e.width = img.width;
    e.height = img.height;
    e.category = category;
    m.entries.push_back(std::move(e));
  }
  m.rebuild_index();
  save_manifest(m, (fs::path(out_dir) / "manifest.jsonl").string());
  return m;
}

}  // namespace patchwork
