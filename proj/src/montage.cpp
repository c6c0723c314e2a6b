#include "patchwork/montage.hpp"

#include <algorithm>
#include <cmath>

#include "patchwork/errors.hpp"

namespace patchwork {

ImageBuffer make_tile_grid(const std::vector<ImageBuffer>& tiles, int cols, int pad,
                           float background) {
  if (tiles.empty()) throw ConfigError("montage needs at least one tile");
  if (cols < 1) throw ConfigError("montage needs cols >= 1");
  int tw = 0, th = 0;
  for (const ImageBuffer& t : tiles) {
    tw = std::max(tw, t.width);
    th = std::max(th, t.height);
  }
  const int rows = (static_cast<int>(tiles.size()) + cols - 1) / cols;
  ImageBuffer out(cols * (tw + pad) + pad, rows * (th + pad) + pad);
  std::fill(out.data.begin(), out.data.end(), background);
  for (size_t i = 0; i < tiles.size(); ++i) {
    const int r = static_cast<int>(i) / cols;
    const int c = static_cast<int>(i) % cols;
    const int y0 = pad + r * (th + pad);
    const int x0 = pad + c * (tw + pad);
    const ImageBuffer& t = tiles[i];
    for (int y = 0; y < t.height; ++y) {
      for (int x = 0; x < t.width; ++x) {
        for (int ch = 0; ch < 3; ++ch) out.at(y0 + y, x0 + x, ch) = t.at(y, x, ch);
      }
    }
  }
  return out;
}

namespace {

ImageBuffer crop_region(const ImageBuffer& img, int y, int x, int size) {
  ImageBuffer out(size, size);
  for (int dy = 0; dy < size; ++dy) {
    for (int dx = 0; dx < size; ++dx) {
      const int sy = std::clamp(y + dy, 0, img.height - 1);
      const int sx = std::clamp(x + dx, 0, img.width - 1);
      for (int c = 0; c < 3; ++c) out.at(dy, dx, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

ImageBuffer load_patch(const CorpusManifest& manifest, const std::string& image_id, int y, int x,
                       int size) {
  const ManifestEntry* e = manifest.find(image_id);
  if (e == nullptr) {
    throw IoError(IoErrorKind::kDataMismatch, "montage image " + image_id +
                                                  " is not in the manifest");
  }
  ImageBuffer img = load_image(manifest.resolve_path(*e));
  return crop_region(img, y, x, size);
}

}  // namespace

void montage_knn(const EmbeddingTable& table, const CorpusManifest& manifest,
                 const PatchRef& query, int k, const std::string& out_png) {
  const int row = table.find_row(query);
  if (row < 0) {
    throw IoError(IoErrorKind::kDataMismatch,
                  "query patch " + query.str() + " is not in the embedding table");
  }
  std::vector<Neighbor> hits = knn_query(table, table.row(static_cast<size_t>(row)), k, &query);
  std::vector<ImageBuffer> tiles;
  tiles.push_back(load_patch(manifest, query.image_id, query.y, query.x, query.size));
  for (const Neighbor& n : hits) {
    tiles.push_back(load_patch(manifest, n.ref.image_id, n.ref.y, n.ref.x, n.ref.size));
  }
  save_png(make_tile_grid(tiles, static_cast<int>(tiles.size())), out_png);
}

void montage_cluster(const ClusterRecord& record, const CorpusManifest& manifest, int max_matches,
                     const std::string& out_png) {
  std::vector<ImageBuffer> tiles;
  const int size = record.roles[0].size;
  for (const ConstellationRole& role : record.roles) {
    tiles.push_back(load_patch(manifest, record.seed_image, role.y, role.x, role.size));
  }
  const int n = std::min<int>(max_matches, static_cast<int>(record.matches.size()));
  for (int i = 0; i < n; ++i) {
    const ClusterMatch& m = record.matches[static_cast<size_t>(i)];
    for (const auto& center : m.centers) {
      const int x = static_cast<int>(std::lround(center[0] - size / 2.0));
      const int y = static_cast<int>(std::lround(center[1] - size / 2.0));
      tiles.push_back(load_patch(manifest, m.image_id, y, x, size));
    }
  }
  save_png(make_tile_grid(tiles, 4), out_png);
}

}  // namespace patchwork
