#pragma once

#include <map>
#include <string>
#include <vector>

#include "patchwork/corpus.hpp"
#include "patchwork/pretext.hpp"

namespace patchwork {

struct PatchRef {
  std::string image_id;
  int y = 0, x = 0, size = 0;

  std::string str() const;
  static PatchRef parse(const std::string& text);

  friend bool operator==(const PatchRef&, const PatchRef&) = default;
};

// (image_id, y, x) lexicographic; the canonical tie-break order.
bool ref_less(const PatchRef& a, const PatchRef& b);

struct EmbeddingTable {
  int dim = 0;
  std::vector<PatchRef> refs;
  std::vector<float> vectors;  // refs.size() x dim

  const float* row(size_t i) const { return vectors.data() + i * static_cast<size_t>(dim); }
  size_t rows() const { return refs.size(); }

  // Rows of one image as a [begin, end) range; rows are stored sorted by
  // (image_id, y, x) so every image is contiguous.
  std::map<std::string, std::pair<size_t, size_t>> image_ranges() const;
  int find_row(const PatchRef& ref) const;  // -1 when absent
};

// Binary container, magic "EMB1": u32 dim, u64 count, then per row a u32
// length-prefixed "image_id:y:x:size" ref and dim little-endian f32 values.
void save_embeddings(const std::string& path, const EmbeddingTable& table);
EmbeddingTable load_embeddings(const std::string& path);

struct ExtractConfig {
  int stride = 16;
  std::string layer;            // empty: the checkpoint's recorded embed layer
  std::vector<PatchRef> patches;  // non-empty: extract exactly these refs
  int batch = 64;
};

// Deterministic feature extraction with a dense patch grid (or an explicit
// patch list). Preprocessing keeps only the deterministic pieces of the
// training chain: the color projection when the checkpoint was trained with
// it, then mean subtraction; no jitter, channel dropping or pixelation.
EmbeddingTable extract_embeddings(const std::string& ckpt_path, const CorpusManifest& manifest,
                                  const ExtractConfig& cfg);

// Cosine similarity without centering; zero vectors score 0 against anything.
double normalized_correlation(const float* u, const float* v, int dim);

struct Neighbor {
  PatchRef ref;
  double score = 0.0;
};

// Exact top-k by similarity, ties broken by (image_id, y, x); the query row
// itself is excluded when exclude is given.
std::vector<Neighbor> knn_query(const EmbeddingTable& table, const float* query, int k,
                                const PatchRef* exclude = nullptr);

}  // namespace patchwork
