#include "patchwork/pretext.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

#include "patchwork/errors.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace patchwork {

PairNetConfig desk_pairnet(int patch_size) {
  PairNetConfig cfg;
  cfg.patch_size = patch_size;
  cfg.stack = {
      LayerSpec::conv(5, 16, 1, 2), LayerSpec::batchnorm(), LayerSpec::relu(),
      LayerSpec::pool(2, 2),
      LayerSpec::conv(3, 32, 1, 1), LayerSpec::batchnorm(), LayerSpec::relu(),
      LayerSpec::pool(2, 2),
      LayerSpec::fc(128),           LayerSpec::batchnorm(), LayerSpec::relu(),
  };
  cfg.fusion = {
      LayerSpec::fc(128), LayerSpec::batchnorm(), LayerSpec::relu(),
      LayerSpec::fc(kNumRelativeLabels), LayerSpec::softmax_xent(kNumRelativeLabels),
  };
  return cfg;
}

NetSpec desk_absloc_spec() {
  return {
      LayerSpec::conv(5, 16, 1, 2), LayerSpec::batchnorm(), LayerSpec::relu(),
      LayerSpec::pool(2, 2),
      LayerSpec::conv(3, 32, 1, 1), LayerSpec::batchnorm(), LayerSpec::relu(),
      LayerSpec::pool(2, 2),
      LayerSpec::fc(128),           LayerSpec::batchnorm(), LayerSpec::relu(),
      LayerSpec::fc(2),
  };
}

PairNet::PairNet(const PairNetConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  Rng init(derive_seed(init_seed, 0x1A7Eull));
  stack_ = Net(cfg.stack, {3, cfg.patch_size, cfg.patch_size}, init, "stack.");
  if (stack_.output_dims().size() != 1) {
    throw ConfigError("pair net stack must end in a flat embedding, got " +
                      shape_str(stack_.output_dims()));
  }
  embed_dim_ = stack_.output_dims()[0];
  fusion_ = Net(cfg.fusion, {2 * embed_dim_}, init, "fuse.");
  if (fusion_.softmax_classes() != kNumRelativeLabels) {
    throw ConfigError("pair net fusion must end in softmax over " +
                      std::to_string(kNumRelativeLabels) + " classes");
  }
}

Tensor PairNet::forward(const Tensor& patches_a, const Tensor& patches_b, Phase phase) {
  if (!patches_a.same_shape(patches_b)) {
    throw ConfigError("pair batches differ in shape: " + shape_str(patches_a) + " vs " +
                      shape_str(patches_b));
  }
  const int64_t n = patches_a.dim(0);
  last_batch_ = n;
  Tensor joint({2 * n, patches_a.dim(1), patches_a.dim(2), patches_a.dim(3)});
  std::copy(patches_a.data.begin(), patches_a.data.end(), joint.data.begin());
  std::copy(patches_b.data.begin(), patches_b.data.end(),
            joint.data.begin() + patches_a.numel());
  Tensor embeds = stack_.forward(joint, phase);  // [2n, d]
  Tensor fused({n, 2 * embed_dim_});
  for (int64_t i = 0; i < n; ++i) {
    std::copy(embeds.ptr() + i * embed_dim_, embeds.ptr() + (i + 1) * embed_dim_,
              fused.ptr() + i * 2 * embed_dim_);
    std::copy(embeds.ptr() + (n + i) * embed_dim_, embeds.ptr() + (n + i + 1) * embed_dim_,
              fused.ptr() + i * 2 * embed_dim_ + embed_dim_);
  }
  return fusion_.forward(fused, phase);
}

void PairNet::backward(const Tensor& dlogits) {
  const int64_t n = last_batch_;
  Tensor dfused = fusion_.backward(dlogits);  // [n, 2d]
  Tensor dembeds({2 * n, embed_dim_});
  for (int64_t i = 0; i < n; ++i) {
    std::copy(dfused.ptr() + i * 2 * embed_dim_, dfused.ptr() + i * 2 * embed_dim_ + embed_dim_,
              dembeds.ptr() + i * embed_dim_);
    std::copy(dfused.ptr() + i * 2 * embed_dim_ + embed_dim_,
              dfused.ptr() + (i + 1) * 2 * embed_dim_, dembeds.ptr() + (n + i) * embed_dim_);
  }
  stack_.backward(dembeds);
}

Tensor PairNet::embed(const Tensor& patches, Phase phase) {
  return stack_.forward(patches, phase);
}

Tensor PairNet::embed_at(const Tensor& patches, Phase phase, const std::string& layer_name) {
  return stack_.forward_to(patches, phase, layer_name);
}

std::vector<Param*> PairNet::params() {
  std::vector<Param*> out = stack_.params();
  for (Param* p : fusion_.params()) out.push_back(p);
  return out;
}

std::vector<StatBuf*> PairNet::stats() {
  std::vector<StatBuf*> out = stack_.stats();
  for (StatBuf* s : fusion_.stats()) out.push_back(s);
  return out;
}

void PairNet::zero_grad() {
  stack_.zero_grad();
  fusion_.zero_grad();
}

ImageCache::ImageCache(const CorpusManifest& manifest, size_t capacity)
    : manifest_(manifest),
      capacity_(std::max<size_t>(1, capacity)),
      slots_(manifest.entries.size()),
      last_used_(manifest.entries.size(), 0) {}

std::shared_ptr<const ImageBuffer> ImageCache::get(int index) {
  {
    std::lock_guard<std::mutex> lock(mu_);
    if (slots_[static_cast<size_t>(index)]) {
      last_used_[static_cast<size_t>(index)] = ++tick_;
      return slots_[static_cast<size_t>(index)];
    }
  }
  const auto& entry = manifest_.entries[static_cast<size_t>(index)];
  auto img = std::make_shared<ImageBuffer>(load_image(manifest_.resolve_path(entry)));
  std::lock_guard<std::mutex> lock(mu_);
  auto& slot = slots_[static_cast<size_t>(index)];
  if (!slot) {
    size_t live = 0;
    for (const auto& s : slots_) live += s != nullptr;
    if (live >= capacity_) {
      size_t victim = SIZE_MAX;
      uint64_t oldest = UINT64_MAX;
      for (size_t i = 0; i < slots_.size(); ++i) {
        if (slots_[i] && last_used_[i] < oldest) {
          oldest = last_used_[i];
          victim = i;
        }
      }
      if (victim != SIZE_MAX) slots_[victim].reset();
    }
    slot = std::move(img);
  }
  last_used_[static_cast<size_t>(index)] = ++tick_;
  return slot;
}

nlohmann::json sampler_to_json(const SamplerConfig& cfg) {
  return json{{"patch_size", cfg.patch_size},
              {"gap", cfg.gap},
              {"jitter", cfg.jitter},
              {"color_mode", color_mode_name(cfg.color_mode)},
              {"pixelation_prob", cfg.pixelation_prob},
              {"pixelation_min_px", cfg.pixelation_min_px},
              {"mean_mode", mean_mode_name(cfg.mean_mode)},
              {"dataset_mean", cfg.dataset_mean}};
}

SamplerConfig sampler_from_json(const json& j) {
  SamplerConfig cfg;
  cfg.patch_size = j.at("patch_size").get<int>();
  cfg.gap = j.at("gap").get<int>();
  cfg.jitter = j.at("jitter").get<int>();
  cfg.color_mode = color_mode_from_name(j.at("color_mode").get<std::string>());
  cfg.pixelation_prob = j.at("pixelation_prob").get<double>();
  cfg.pixelation_min_px = j.at("pixelation_min_px").get<int>();
  cfg.mean_mode = mean_mode_from_name(j.at("mean_mode").get<std::string>());
  auto dm = j.at("dataset_mean");
  for (size_t i = 0; i < 3; ++i) cfg.dataset_mean[i] = dm.at(i).get<double>();
  return cfg;
}

void save_checkpoint_meta(const std::string& ckpt_path, const CheckpointMeta& meta) {
  json j{{"kind", meta.kind},
         {"sampler", sampler_to_json(meta.sampler)},
         {"seed", meta.seed},
         {"step", meta.step}};
  if (meta.kind == "pairnet") {
    j["patch_size"] = meta.pair_cfg.patch_size;
    j["stack"] = netspec_to_json(meta.pair_cfg.stack);
    j["fusion"] = netspec_to_json(meta.pair_cfg.fusion);
    j["embed_layer"] = meta.embed_layer;
  } else {
    j["net"] = netspec_to_json(meta.absloc_spec);
  }
  const std::string path = ckpt_path + ".json";
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorKind::kUnwritable, "cannot write checkpoint meta " + path);
  out << j.dump(2) << "\n";
}

CheckpointMeta load_checkpoint_meta(const std::string& ckpt_path) {
  const std::string path = ckpt_path + ".json";
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::kMissingFile, "cannot open checkpoint meta " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw IoError(IoErrorKind::kCorruptPayload, path + ": bad JSON: " + e.what());
  }
  CheckpointMeta meta;
  try {
    meta.kind = j.at("kind").get<std::string>();
    meta.sampler = sampler_from_json(j.at("sampler"));
    meta.seed = j.at("seed").get<uint64_t>();
    meta.step = j.at("step").get<int>();
    if (meta.kind == "pairnet") {
      meta.pair_cfg.patch_size = j.at("patch_size").get<int>();
      meta.pair_cfg.stack = netspec_from_json(j.at("stack"));
      meta.pair_cfg.fusion = netspec_from_json(j.at("fusion"));
      meta.embed_layer = j.at("embed_layer").get<std::string>();
    } else if (meta.kind == "absloc") {
      meta.absloc_spec = netspec_from_json(j.at("net"));
    } else {
      throw IoError(IoErrorKind::kCorruptPayload, path + ": unknown checkpoint kind " + meta.kind);
    }
  } catch (const json::exception& e) {
    throw IoError(IoErrorKind::kCorruptPayload, path + ": bad checkpoint meta: " + e.what());
  }
  return meta;
}

PairNet load_pairnet(const std::string& ckpt_path, CheckpointMeta* meta_out) {
  CheckpointMeta meta = load_checkpoint_meta(ckpt_path);
  if (meta.kind != "pairnet") {
    throw ConfigError("expected a pair-classifier checkpoint at " + ckpt_path + ", got kind '" +
                      meta.kind + "'");
  }
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  PairNet net(meta.pair_cfg, 0);
  for (Param* p : net.params()) {
    const Tensor* t = ckpt.find_param(p->name);
    if (t == nullptr) {
      throw IoError(IoErrorKind::kDataMismatch, "checkpoint is missing parameter " + p->name);
    }
    if (t->shape != p->value.shape) {
      throw IoError(IoErrorKind::kDataMismatch,
                    "checkpoint parameter " + p->name + " has shape " + shape_str(*t) +
                        ", net expects " + shape_str(p->value));
    }
    p->value = *t;
  }
  for (StatBuf* s : net.stats()) {
    const Tensor* t = ckpt.find_stat(s->name);
    if (t == nullptr) {
      throw IoError(IoErrorKind::kDataMismatch, "checkpoint is missing statistic " + s->name);
    }
    s->value = *t;
  }
  if (meta_out != nullptr) *meta_out = meta;
  return net;
}

namespace {

struct PairBatch {
  Tensor a, b;
  std::vector<int> labels;
};

// Fills batch slots from per-slot derived RNG streams; identical results for
// any thread count.
void assemble_pair_batch(PairBatch& batch, const SamplerConfig& sampler, ImageCache& cache,
                         uint64_t seed, int step, int threads, bool shuffle_labels) {
  const int n = static_cast<int>(batch.labels.size());
  const int64_t patch_elems = batch.a.numel() / n;
  auto fill_slot = [&](int i) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(step), static_cast<uint64_t>(i)));
    const int idx = static_cast<int>(rng.next_below(cache.manifest().entries.size()));
    auto img = cache.get(idx);
    PatchPair pair = sample_pair(*img, cache.manifest().entries[static_cast<size_t>(idx)].image_id,
                                 sampler, rng);
    if (shuffle_labels) pair.label = static_cast<int>(rng.next_below(kNumRelativeLabels));
    std::copy(pair.patch_a.data.begin(), pair.patch_a.data.end(),
              batch.a.data.begin() + i * patch_elems);
    std::copy(pair.patch_b.data.begin(), pair.patch_b.data.end(),
              batch.b.data.begin() + i * patch_elems);
    batch.labels[static_cast<size_t>(i)] = pair.label;
  };
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fill_slot(i);
    return;
  }
  const int n_workers = std::min(threads, n);
  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> errors(static_cast<size_t>(n_workers));
  for (int w = 0; w < n_workers; ++w) {
    workers.emplace_back([&, w] {
      try {
        for (int i = w; i < n; i += n_workers) fill_slot(i);
      } catch (...) {
        errors[static_cast<size_t>(w)] = std::current_exception();
      }
    });
  }
  for (auto& t : workers) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

void check_finite_loss(double loss, int step) {
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite loss at step " + std::to_string(step));
  }
}

void check_finite_grads(const std::vector<Param*>& params, int step) {
  for (const Param* p : params) {
    if (!p->grad.all_finite()) {
      throw NumericError("non-finite gradient in " + p->name + " at step " +
                         std::to_string(step));
    }
  }
}

double current_lr(const TrainConfig& cfg, int step) {
  if (cfg.lr_decay_every <= 0 || cfg.lr_decay == 1.0) return cfg.lr;
  const int drops = (step - 1) / cfg.lr_decay_every;
  return cfg.lr * std::pow(cfg.lr_decay, drops);
}

void validate_train_config(const TrainConfig& cfg) {
  if (cfg.steps < 1) throw ConfigError("training needs steps >= 1");
  if (cfg.batch_size < 2) throw ConfigError("training needs batch_size >= 2");
  if (cfg.lr <= 0) throw ConfigError("training needs lr > 0");
  if (cfg.momentum < 0 || cfg.momentum >= 1) throw ConfigError("momentum must lie in [0, 1)");
  if (cfg.out_dir.empty()) throw ConfigError("training needs an output directory");
}

std::FILE* open_metrics(const std::string& out_dir, std::string* path_out) {
  *path_out = (fs::path(out_dir) / "metrics.csv").string();
  std::FILE* f = std::fopen(path_out->c_str(), "w");
  if (f == nullptr) throw IoError(IoErrorKind::kUnwritable, "cannot write " + *path_out);
  std::fprintf(f, "step,loss,acc,lr\n");
  return f;
}

std::string ckpt_name(const std::string& out_dir, int step, bool final) {
  char buf[64];
  if (final) {
    std::snprintf(buf, sizeof(buf), "ckpt_final.cpnet");
  } else {
    std::snprintf(buf, sizeof(buf), "ckpt_step%06d.cpnet", step);
  }
  return (fs::path(out_dir) / buf).string();
}

}  // namespace

TrainResult train_pairnet(const PairNetConfig& net_cfg, const SamplerConfig& sampler,
                          const CorpusManifest& train_manifest,
                          const CorpusManifest* val_manifest, const TrainConfig& train) {
  validate_train_config(train);
  if (train_manifest.entries.empty()) throw ConfigError("training manifest is empty");
  std::error_code ec;
  fs::create_directories(train.out_dir, ec);
  if (ec) {
    throw IoError(IoErrorKind::kUnwritable, "cannot create " + train.out_dir + ": " + ec.message());
  }

  PairNet net(net_cfg, train.seed);
  auto params = net.params();
  const int p = net_cfg.patch_size;

  CheckpointMeta meta;
  meta.kind = "pairnet";
  meta.pair_cfg = net_cfg;
  meta.sampler = sampler;
  meta.seed = train.seed;
  meta.embed_layer = net.stack().last_layer_name();

  auto save_at = [&](int step, bool final) {
    const std::string path = ckpt_name(train.out_dir, step, final);
    Checkpoint ckpt;
    for (Param* prm : params) ckpt.params.emplace_back(prm->name, prm->value);
    for (StatBuf* s : net.stats()) ckpt.stats.emplace_back(s->name, s->value);
    save_checkpoint(path, ckpt);
    meta.step = step;
    save_checkpoint_meta(path, meta);
    return path;
  };
  save_at(0, false);

  ImageCache cache(train_manifest, train.cache_images);
  std::unique_ptr<ImageCache> val_cache;
  PairBatch val_batch;
  if (train.eval_interval > 0 && train.val_pairs > 0) {
    const CorpusManifest& vm = val_manifest != nullptr ? *val_manifest : train_manifest;
    val_cache = std::make_unique<ImageCache>(vm, train.cache_images);
    val_batch.a = Tensor({train.val_pairs, 3, p, p});
    val_batch.b = Tensor({train.val_pairs, 3, p, p});
    val_batch.labels.assign(static_cast<size_t>(train.val_pairs), 0);
    assemble_pair_batch(val_batch, sampler, *val_cache, derive_seed(train.seed, 0xE7A1ull), 0,
                        train.threads, false);
  }

  std::string metrics_path;
  std::FILE* metrics = open_metrics(train.out_dir, &metrics_path);

  PairBatch batch;
  batch.a = Tensor({train.batch_size, 3, p, p});
  batch.b = Tensor({train.batch_size, 3, p, p});
  batch.labels.assign(static_cast<size_t>(train.batch_size), 0);

  TrainResult result;
  auto eval_val = [&](int step) {
    if (!val_cache) return;
    const int64_t m = val_batch.a.dim(0);
    const int64_t chunk = 64;
    int64_t correct = 0;
    double loss_sum = 0.0;
    for (int64_t at = 0; at < m; at += chunk) {
      const int64_t n = std::min(chunk, m - at);
      Tensor a({n, 3, p, p}), b({n, 3, p, p});
      std::copy_n(val_batch.a.ptr() + at * 3 * p * p, n * 3 * p * p, a.ptr());
      std::copy_n(val_batch.b.ptr() + at * 3 * p * p, n * 3 * p * p, b.ptr());
      std::vector<int> labels(val_batch.labels.begin() + at, val_batch.labels.begin() + at + n);
      Tensor logits = net.forward(a, b, Phase::kInfer);
      SoftmaxXentResult res = softmax_xent(logits, labels);
      loss_sum += res.loss * static_cast<double>(n);
      for (int64_t i = 0; i < n; ++i) {
        correct += res.predictions[static_cast<size_t>(i)] == labels[static_cast<size_t>(i)];
      }
    }
    result.final_val_accuracy = static_cast<double>(correct) / static_cast<double>(m);
    if (!train.quiet) {
      std::printf("step %d val_loss %.6f val_acc %.4f\n", step,
                  loss_sum / static_cast<double>(m), result.final_val_accuracy);
      std::fflush(stdout);
    }
  };

  for (int step = 1; step <= train.steps; ++step) {
    assemble_pair_batch(batch, sampler, cache, train.seed, step, train.threads,
                        train.shuffle_labels);
    const double lr_now = current_lr(train, step);
    net.zero_grad();
    Tensor logits = net.forward(batch.a, batch.b, Phase::kTrain);
    SoftmaxXentResult res = softmax_xent(logits, batch.labels);
    check_finite_loss(res.loss, step);
    net.backward(res.dlogits);
    check_finite_grads(params, step);
    sgd_momentum_step(params, lr_now, train.momentum);
    int correct = 0;
    for (int i = 0; i < train.batch_size; ++i) {
      correct += res.predictions[static_cast<size_t>(i)] == batch.labels[static_cast<size_t>(i)];
    }
    std::fprintf(metrics, "%d,%.9g,%.6f,%.9g\n", step, res.loss,
                 static_cast<double>(correct) / train.batch_size, lr_now);
    result.final_loss = res.loss;
    if (train.eval_interval > 0 && step % train.eval_interval == 0) eval_val(step);
    if (train.checkpoint_interval > 0 && step % train.checkpoint_interval == 0 &&
        step != train.steps) {
      save_at(step, false);
    }
  }
  if (train.eval_interval > 0 && train.steps % train.eval_interval != 0) eval_val(train.steps);
  std::fclose(metrics);
  result.final_checkpoint = save_at(train.steps, true);
  result.metrics_path = metrics_path;
  return result;
}

TrainResult train_absloc(const NetSpec& spec, const SamplerConfig& sampler,
                         const CorpusManifest& train_manifest, const TrainConfig& train) {
  validate_train_config(train);
  if (train_manifest.entries.empty()) throw ConfigError("training manifest is empty");
  std::error_code ec;
  fs::create_directories(train.out_dir, ec);
  if (ec) {
    throw IoError(IoErrorKind::kUnwritable, "cannot create " + train.out_dir + ": " + ec.message());
  }

  const int p = sampler.patch_size;
  Rng init(derive_seed(train.seed, 0xAB51ull));
  Net net(spec, {3, p, p}, init);
  if (net.output_dims() != std::vector<int64_t>{2}) {
    throw ConfigError("absolute-position net must end in fc(2), got " +
                      shape_str(net.output_dims()));
  }
  auto params = net.params();

  CheckpointMeta meta;
  meta.kind = "absloc";
  meta.absloc_spec = spec;
  meta.sampler = sampler;
  meta.seed = train.seed;

  auto save_at = [&](int step, bool final) {
    const std::string path = ckpt_name(train.out_dir, step, final);
    Checkpoint ckpt = snapshot_net(net);
    save_checkpoint(path, ckpt);
    meta.step = step;
    save_checkpoint_meta(path, meta);
    return path;
  };
  save_at(0, false);

  ImageCache cache(train_manifest, train.cache_images);
  std::string metrics_path;
  std::FILE* metrics = open_metrics(train.out_dir, &metrics_path);

  Tensor batch({train.batch_size, 3, p, p});
  Tensor targets({train.batch_size, 2});
  const int64_t patch_elems = 3LL * p * p;

  auto fill_slot = [&](int step, int i) {
    Rng rng(derive_seed(train.seed, static_cast<uint64_t>(step), static_cast<uint64_t>(i)));
    const int idx = static_cast<int>(rng.next_below(train_manifest.entries.size()));
    auto img = cache.get(idx);
    std::vector<GridCell> cells = single_positions(*img, sampler, rng);
    const GridCell& cell = cells[rng.next_below(cells.size())];
    Tensor patch = crop_patch(*img, cell.y, cell.x, p);
    preprocess_patch(patch, sampler, rng);
    std::copy(patch.data.begin(), patch.data.end(), batch.data.begin() + i * patch_elems);
    auto [tx, ty] = patch_center_target(cell, p, img->width, img->height);
    targets.at2(i, 0) = tx;
    targets.at2(i, 1) = ty;
  };

  TrainResult result;
  for (int step = 1; step <= train.steps; ++step) {
    if (train.threads <= 1) {
      for (int i = 0; i < train.batch_size; ++i) fill_slot(step, i);
    } else {
      const int n_workers = std::min(train.threads, train.batch_size);
      std::vector<std::thread> workers;
      std::vector<std::exception_ptr> errors(static_cast<size_t>(n_workers));
      for (int w = 0; w < n_workers; ++w) {
        workers.emplace_back([&, w] {
          try {
            for (int i = w; i < train.batch_size; i += n_workers) fill_slot(step, i);
          } catch (...) {
            errors[static_cast<size_t>(w)] = std::current_exception();
          }
        });
      }
      for (auto& t : workers) t.join();
      for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
      }
    }
    const double lr_now = current_lr(train, step);
    net.zero_grad();
    Tensor pred = net.forward(batch, Phase::kTrain);
    L2LossResult res = l2_loss(pred, targets);
    check_finite_loss(res.loss, step);
    net.backward(res.dpred);
    check_finite_grads(params, step);
    sgd_momentum_step(params, lr_now, train.momentum);
    // The acc column carries batch RMSE for position regression.
    std::fprintf(metrics, "%d,%.9g,%.6f,%.9g\n", step, res.loss, std::sqrt(res.loss), lr_now);
    result.final_loss = res.loss;
    if (train.checkpoint_interval > 0 && step % train.checkpoint_interval == 0 &&
        step != train.steps) {
      save_at(step, false);
    }
  }
  std::fclose(metrics);
  result.final_checkpoint = save_at(train.steps, true);
  result.metrics_path = metrics_path;
  return result;
}

}  // namespace patchwork
