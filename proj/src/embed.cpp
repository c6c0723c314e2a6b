#include "patchwork/embed.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>

#include "patchwork/errors.hpp"

namespace patchwork {

std::string PatchRef::str() const {
  return image_id + ":" + std::to_string(y) + ":" + std::to_string(x) + ":" +
         std::to_string(size);
}

PatchRef PatchRef::parse(const std::string& text) {
  // image ids may not contain ':', so split from the right.
  std::array<size_t, 3> cuts;
  size_t pos = text.size();
  for (int i = 2; i >= 0; --i) {
    pos = text.rfind(':', pos == 0 ? std::string::npos : pos - 1);
    if (pos == std::string::npos) {
      throw ConfigError("bad patch ref '" + text + "', expected image_id:y:x:size");
    }
    cuts[static_cast<size_t>(i)] = pos;
  }
  PatchRef ref;
  ref.image_id = text.substr(0, cuts[0]);
  auto parse_int = [&](size_t from, size_t to, int& out) {
    auto res = std::from_chars(text.data() + from, text.data() + to, out);
    if (res.ec != std::errc() || res.ptr != text.data() + to) {
      throw ConfigError("bad patch ref '" + text + "', expected image_id:y:x:size");
    }
  };
  parse_int(cuts[0] + 1, cuts[1], ref.y);
  parse_int(cuts[1] + 1, cuts[2], ref.x);
  parse_int(cuts[2] + 1, text.size(), ref.size);
  return ref;
}

bool ref_less(const PatchRef& a, const PatchRef& b) {
  if (a.image_id != b.image_id) return a.image_id < b.image_id;
  if (a.y != b.y) return a.y < b.y;
  return a.x < b.x;
}

std::map<std::string, std::pair<size_t, size_t>> EmbeddingTable::image_ranges() const {
  std::map<std::string, std::pair<size_t, size_t>> ranges;
  size_t i = 0;
  while (i < refs.size()) {
    size_t j = i;
    while (j < refs.size() && refs[j].image_id == refs[i].image_id) ++j;
    ranges[refs[i].image_id] = {i, j};
    i = j;
  }
  return ranges;
}

int EmbeddingTable::find_row(const PatchRef& ref) const {
  auto it = std::lower_bound(refs.begin(), refs.end(), ref, ref_less);
  if (it != refs.end() && *it == ref) return static_cast<int>(it - refs.begin());
  return -1;
}

namespace {

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void get(std::istream& in, T& v, const std::string& path) {
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError(IoErrorKind::kCorruptPayload, "truncated embedding table " + path);
}

constexpr char kEmbMagic[4] = {'E', 'M', 'B', '1'};

}  // namespace

void save_embeddings(const std::string& path, const EmbeddingTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrorKind::kUnwritable, "cannot write embedding table " + path);
  out.write(kEmbMagic, sizeof(kEmbMagic));
  put(out, static_cast<uint32_t>(table.dim));
  put(out, static_cast<uint64_t>(table.rows()));
  for (size_t i = 0; i < table.rows(); ++i) {
    const std::string ref = table.refs[i].str();
    put(out, static_cast<uint32_t>(ref.size()));
    out.write(ref.data(), static_cast<std::streamsize>(ref.size()));
    out.write(reinterpret_cast<const char*>(table.row(i)),
              static_cast<std::streamsize>(sizeof(float) * static_cast<size_t>(table.dim)));
  }
  if (!out) throw IoError(IoErrorKind::kUnwritable, "short write to " + path);
}

EmbeddingTable load_embeddings(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::kMissingFile, "cannot open embedding table " + path);
  char magic[4] = {0};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kEmbMagic, sizeof(kEmbMagic)) != 0) {
    throw IoError(IoErrorKind::kUnsupportedFormat, path + " is not an EMB1 embedding table");
  }
  EmbeddingTable table;
  uint32_t dim = 0;
  uint64_t count = 0;
  get(in, dim, path);
  get(in, count, path);
  table.dim = static_cast<int>(dim);
  table.refs.reserve(count);
  table.vectors.resize(static_cast<size_t>(count) * dim);
  for (uint64_t i = 0; i < count; ++i) {
    uint32_t len = 0;
    get(in, len, path);
    std::string text(len, '\0');
    in.read(text.data(), len);
    if (!in) throw IoError(IoErrorKind::kCorruptPayload, "truncated embedding table " + path);
    try {
      table.refs.push_back(PatchRef::parse(text));
    } catch (const ConfigError& e) {
      throw IoError(IoErrorKind::kCorruptPayload, path + ": " + e.what());
    }
    in.read(reinterpret_cast<char*>(table.vectors.data() + i * dim),
            static_cast<std::streamsize>(sizeof(float) * dim));
    if (!in) throw IoError(IoErrorKind::kCorruptPayload, "truncated embedding table " + path);
  }
  return table;
}

EmbeddingTable extract_embeddings(const std::string& ckpt_path, const CorpusManifest& manifest,
                                  const ExtractConfig& cfg) {
  CheckpointMeta meta;
  PairNet net = load_pairnet(ckpt_path, &meta);
  const std::string layer = cfg.layer.empty() ? meta.embed_layer : cfg.layer;
  const int p = meta.pair_cfg.patch_size;

  SamplerConfig pre = meta.sampler;  // deterministic subset applied below

  std::vector<PatchRef> refs;
  if (!cfg.patches.empty()) {
    refs = cfg.patches;
    for (const PatchRef& r : refs) {
      if (manifest.find(r.image_id) == nullptr) {
        throw IoError(IoErrorKind::kDataMismatch,
                      "patch ref " + r.str() + " names an image absent from the manifest");
      }
    }
  } else {
    if (cfg.stride <= 0) throw ConfigError("extraction stride must be >= 1");
    for (const auto& e : manifest.entries) {
      for (int y = 0; y + p <= e.height; y += cfg.stride) {
        for (int x = 0; x + p <= e.width; x += cfg.stride) {
          refs.push_back(PatchRef{e.image_id, y, x, p});
        }
      }
    }
  }
  std::sort(refs.begin(), refs.end(), ref_less);

  EmbeddingTable table;
  table.refs = std::move(refs);

  const int batch = std::max(1, cfg.batch);
  std::shared_ptr<const ImageBuffer> img;
  std::string img_id;
  std::vector<Tensor> pending;
  size_t out_at = 0;
  auto flush = [&](std::vector<Tensor>& batch_patches) {
    if (batch_patches.empty()) return;
    const int64_t n = static_cast<int64_t>(batch_patches.size());
    Tensor x({n, 3, p, p});
    for (int64_t i = 0; i < n; ++i) {
      std::copy(batch_patches[static_cast<size_t>(i)].data.begin(),
                batch_patches[static_cast<size_t>(i)].data.end(),
                x.data.begin() + i * 3 * p * p);
    }
    Tensor e = net.embed_at(x, Phase::kInfer, layer);
    const int64_t d = e.numel() / n;
    if (table.dim == 0) {
      table.dim = static_cast<int>(d);
      table.vectors.resize(table.refs.size() * static_cast<size_t>(d));
    }
    for (int64_t i = 0; i < n; ++i) {
      float* dst = table.vectors.data() + (out_at + static_cast<size_t>(i)) * table.dim;
      const double* src = e.ptr() + i * d;
      for (int64_t k = 0; k < d; ++k) dst[k] = static_cast<float>(src[k]);
    }
    out_at += static_cast<size_t>(n);
    batch_patches.clear();
  };

  ImageCache cache(manifest, 64);
  for (const PatchRef& r : table.refs) {
    if (r.image_id != img_id) {
      flush(pending);
      img = cache.get(manifest.index_of(r.image_id));
      img_id = r.image_id;
    }
    if (r.size != p) {
      throw ConfigError("patch ref " + r.str() + " does not match checkpoint patch size " +
                        std::to_string(p));
    }
    Tensor patch = crop_patch(*img, r.y, r.x, r.size);
    if (pre.color_mode == ColorMode::kProjection) apply_color_projection(patch);
    subtract_mean(patch, pre.mean_mode, pre.dataset_mean);
    pending.push_back(std::move(patch));
    if (static_cast<int>(pending.size()) >= batch) flush(pending);
  }
  flush(pending);
  return table;
}

double normalized_correlation(const float* u, const float* v, int dim) {
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (int i = 0; i < dim; ++i) {
    uv += static_cast<double>(u[i]) * v[i];
    uu += static_cast<double>(u[i]) * u[i];
    vv += static_cast<double>(v[i]) * v[i];
  }
  if (uu == 0.0 || vv == 0.0) return 0.0;
  return uv / (std::sqrt(uu) * std::sqrt(vv));
}

std::vector<Neighbor> knn_query(const EmbeddingTable& table, const float* query, int k,
                                const PatchRef* exclude) {
  if (k < 1) throw ConfigError("knn needs k >= 1");
  std::vector<std::pair<double, size_t>> scored;
  scored.reserve(table.rows());
  for (size_t i = 0; i < table.rows(); ++i) {
    if (exclude != nullptr && table.refs[i] == *exclude) continue;
    scored.emplace_back(normalized_correlation(query, table.row(i), table.dim), i);
  }
  auto better = [&table](const std::pair<double, size_t>& a, const std::pair<double, size_t>& b) {
    if (a.first != b.first) return a.first > b.first;
    return ref_less(table.refs[a.second], table.refs[b.second]);
  };
  const size_t kk = std::min<size_t>(static_cast<size_t>(k), scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<int64_t>(kk), scored.end(),
                    better);
  std::vector<Neighbor> out;
  out.reserve(kk);
  for (size_t i = 0; i < kk; ++i) {
    out.push_back(Neighbor{table.refs[scored[i].second], scored[i].first});
  }
  return out;
}

}  // namespace patchwork
