#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "patchwork/image.hpp"

namespace patchwork {

struct ManifestEntry {
  std::string image_id;
  std::string path;  // relative to the manifest directory
  int width = 0;
  int height = 0;
  std::string category;
};

struct CorpusManifest {
  uint64_t seed = 0;
  std::vector<ManifestEntry> entries;
  std::string base_dir;

  const ManifestEntry* find(const std::string& image_id) const;
  int index_of(const std::string& image_id) const;  // -1 when absent
  std::string resolve_path(const ManifestEntry& e) const;
  void rebuild_index();

 private:
  std::unordered_map<std::string, int> index_;
};

CorpusManifest load_manifest(const std::string& path);
void save_manifest(const CorpusManifest& manifest, const std::string& path);

struct AberrationSpec {
  bool enabled = false;
  double green_scale = 0.98;  // valid range [0.9, 1.0]
};

enum class SceneStyle { kStructured, kNoise };

struct SynthOptions {
  SceneStyle style = SceneStyle::kStructured;
  int min_side = 256;
  int max_side = 352;
  int min_objects = 3;
  int max_objects = 5;
  double min_object_frac = 0.50;  // object side as a fraction of min(W, H)
  double max_object_frac = 0.62;
};

// Resamples only the green plane toward the image center by green_scale,
// simulating lateral chromatic aberration. Red and blue are untouched.
void apply_green_aberration(ImageBuffer& img, double green_scale);

// Writes n_images PNGs plus manifest.jsonl under out_dir. Generation is a
// pure function of (seed, options): the i-th image of a corpus depends only
// on the seed and i, so reruns are byte-identical.
CorpusManifest synth_corpus(int n_images, const AberrationSpec& aberration, uint64_t seed,
                            const std::string& out_dir, const SynthOptions& options = {});

const std::vector<std::string>& structured_categories();

}  // namespace patchwork
