#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "patchwork/corpus.hpp"
#include "patchwork/net.hpp"
#include "patchwork/sampler.hpp"

namespace patchwork {

struct PairNetConfig {
  NetSpec stack;   // shared trunk, applied to both patches
  NetSpec fusion;  // joint classifier over [embed_a | embed_b]
  int patch_size = 32;
};

// Two conv blocks plus an embedding fc, then a two-layer fused classifier.
PairNetConfig desk_pairnet(int patch_size = 32);
// Single stack ending in fc(2) for normalized patch-center regression.
NetSpec desk_absloc_spec();

// Late-fusion siamese classifier. Weight sharing is exact because the two
// branches are the same Net object run on the stacked [a; b] batch; batch
// norm inside the trunk therefore normalizes over the joint 2N batch.
class PairNet {
 public:
  PairNet(const PairNetConfig& cfg, uint64_t init_seed);

  Tensor forward(const Tensor& patches_a, const Tensor& patches_b, Phase phase);
  void backward(const Tensor& dlogits);

  Tensor embed(const Tensor& patches, Phase phase);
  Tensor embed_at(const Tensor& patches, Phase phase, const std::string& layer_name);

  std::vector<Param*> params();
  std::vector<StatBuf*> stats();
  void zero_grad();

  const PairNetConfig& config() const { return cfg_; }
  Net& stack() { return stack_; }
  Net& fusion() { return fusion_; }
  int64_t embed_dim() const { return embed_dim_; }

 private:
  PairNetConfig cfg_;
  Net stack_, fusion_;
  int64_t embed_dim_ = 0;
  int64_t last_batch_ = 0;
};

// Thread-safe LRU cache of decoded corpus images.
class ImageCache {
 public:
  ImageCache(const CorpusManifest& manifest, size_t capacity);
  std::shared_ptr<const ImageBuffer> get(int index);
  const CorpusManifest& manifest() const { return manifest_; }

 private:
  const CorpusManifest& manifest_;
  size_t capacity_;
  std::mutex mu_;
  std::vector<std::shared_ptr<const ImageBuffer>> slots_;
  std::vector<uint64_t> last_used_;
  uint64_t tick_ = 0;
};

struct TrainConfig {
  int steps = 1000;
  int batch_size = 16;
  double lr = 0.01;
  double momentum = 0.999;
  double lr_decay = 1.0;      // multiplier applied every lr_decay_every steps
  int lr_decay_every = 0;     // 0 disables decay
  uint64_t seed = 0;
  int eval_interval = 200;
  int checkpoint_interval = 0;  // 0: only step 0 and the final step
  int val_pairs = 512;
  int threads = 1;
  bool shuffle_labels = false;
  size_t cache_images = 512;
  std::string out_dir;
  bool quiet = false;
};

struct TrainResult {
  std::string final_checkpoint;
  std::string metrics_path;
  double final_loss = 0.0;
  double final_val_accuracy = -1.0;
};

// Sidecar JSON stored next to each checkpoint, describing how to rebuild
// and drive the net (specs, sampler settings, patch size, training step).
struct CheckpointMeta {
  std::string kind;  // "pairnet" or "absloc"
  PairNetConfig pair_cfg;
  NetSpec absloc_spec;
  SamplerConfig sampler;
  uint64_t seed = 0;
  int step = 0;
  std::string embed_layer;
};

void save_checkpoint_meta(const std::string& ckpt_path, const CheckpointMeta& meta);
CheckpointMeta load_checkpoint_meta(const std::string& ckpt_path);

// Rebuilds a pair net from its checkpoint plus sidecar and restores weights
// and running statistics.
PairNet load_pairnet(const std::string& ckpt_path, CheckpointMeta* meta_out = nullptr);
SamplerConfig sampler_from_json(const nlohmann::json& j);
nlohmann::json sampler_to_json(const SamplerConfig& cfg);

TrainResult train_pairnet(const PairNetConfig& net_cfg, const SamplerConfig& sampler,
                          const CorpusManifest& train_manifest,
                          const CorpusManifest* val_manifest, const TrainConfig& train);

TrainResult train_absloc(const NetSpec& spec, const SamplerConfig& sampler,
                         const CorpusManifest& train_manifest, const TrainConfig& train);

// Normalized patch-center targets for a jittered placement.
inline std::pair<double, double> patch_center_target(const GridCell& cell, int patch_size,
                                                     int width, int height) {
  return {(cell.x + patch_size / 2.0) / width, (cell.y + patch_size / 2.0) / height};
}

}  // namespace patchwork
