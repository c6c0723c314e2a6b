// Single command-line entry point: corpus synthesis, pair sampling, training,
// feature extraction, retrieval, constellation mining, selection, evaluation
// and montage rendering. Exit codes: 0 ok, 1 usage, 2 data, 3 numeric.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "patchwork/corpus.hpp"
#include "patchwork/config.hpp"
#include "patchwork/embed.hpp"
#include "patchwork/errors.hpp"
#include "patchwork/eval.hpp"
#include "patchwork/gradcheck.hpp"
#include "patchwork/hash.hpp"
#include "patchwork/mining.hpp"
#include "patchwork/montage.hpp"
#include "patchwork/pretext.hpp"
#include "patchwork/sampler.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace patchwork;

namespace {

// Binds command-line flags onto declared RunConfig keys. Precedence is
// declared default < --config file < explicit flag, regardless of the order
// the flags appear on the command line.
class FlagSet {
 public:
  explicit FlagSet(CLI::App* cmd) : cmd_(cmd) {
    cmd->add_option("--config", config_path_, "key = value configuration file");
  }

  void opt(const std::string& flag, const std::string& key, const std::string& def,
           const std::string& help) {
    cfg_.declare(key, def);
    auto b = std::make_unique<Binding>();
    b->key = key;
    b->option = cmd_->add_option(flag, b->value, help);
    bindings_.push_back(std::move(b));
  }

  void flag(const std::string& flag, const std::string& key, const std::string& help) {
    cfg_.declare(key, "false");
    auto b = std::make_unique<Binding>();
    b->key = key;
    b->is_flag = true;
    b->option = cmd_->add_flag(flag, b->given, help);
    bindings_.push_back(std::move(b));
  }

  RunConfig& resolve() {
    if (!config_path_.empty()) cfg_.load_file(config_path_);
    for (const auto& b : bindings_) {
      if (b->is_flag) {
        if (b->given) cfg_.set(b->key, "true");
      } else if (b->option->count() > 0) {
        cfg_.set(b->key, b->value);
      }
    }
    return cfg_;
  }

 private:
  struct Binding {
    std::string key;
    std::string value;
    bool given = false;
    bool is_flag = false;
    CLI::Option* option = nullptr;
  };

  CLI::App* cmd_;
  RunConfig cfg_;
  std::string config_path_;
  std::vector<std::unique_ptr<Binding>> bindings_;
};

std::string default_threads() {
  const char* env = std::getenv("PATCHWORK_THREADS");
  return env != nullptr && *env != '\0' ? env : "1";
}

const std::string& require_key(const RunConfig& cfg, const std::string& key,
                               const std::string& flag) {
  const std::string& v = cfg.get(key);
  if (v.empty()) throw ConfigError("missing required " + flag);
  return v;
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(IoErrorKind::kUnwritable, "cannot create " + dir + ": " + ec.message());
}

void write_json_file(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(IoErrorKind::kUnwritable, "cannot write " + path);
  out << j.dump(2) << '\n';
}

json load_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoErrorKind::kMissingFile, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw IoError(IoErrorKind::kCorruptPayload, path + ": " + e.what());
  }
}

// Relative paths of every regular file under dir, the index file itself
// excluded, so a finished run documents its own artifacts.
void write_artifact_index(const std::string& dir) {
  std::vector<std::string> names;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    std::string rel = fs::relative(entry.path(), dir).generic_string();
    if (rel != "manifest.json") names.push_back(std::move(rel));
  }
  std::sort(names.begin(), names.end());
  write_json_file(dir + "/manifest.json", json{{"artifacts", names}});
}

json provenance_block(const RunConfig& cfg,
                      const std::vector<std::pair<std::string, std::string>>& files,
                      const uint64_t* seed) {
  json p;
  p["config_hash"] = hash_string(cfg.resolved({"out"}));
  for (const auto& [label, path] : files) p[label + "_hash"] = hash_file(path);
  if (seed != nullptr) p["seed"] = *seed;
  return p;
}

json anchors_json() {
  return json{{"chance_accuracy", ReferenceAnchors::kChanceAccuracy},
              {"pretext_accuracy", ReferenceAnchors::kPretextAccuracy},
              {"absloc_rmse_raw", ReferenceAnchors::kAbsLocRmseRaw},
              {"absloc_rmse_chance", ReferenceAnchors::kAbsLocRmseChance},
              {"absloc_rmse_projected", ReferenceAnchors::kAbsLocRmseProjected}};
}

void bind_sampler(FlagSet& f, const char* patch, const char* gap, const char* jitter) {
  f.opt("--patch-size", "patch_size", patch, "patch side in pixels");
  f.opt("--gap", "gap", gap, "grid gap between patches");
  f.opt("--jitter", "jitter", jitter, "max per-axis patch jitter");
  f.opt("--color-mode", "color_mode", "projection", "projection | drop | none");
  f.opt("--pixelation-prob", "pixelation_prob", "0.25", "probability of pixelating a patch");
  f.opt("--pixelation-min-px", "pixelation_min_px", "100", "lower bound of the pixel budget");
  f.opt("--mean-mode", "mean_mode", "per_patch", "per_patch | dataset");
}

SamplerConfig sampler_from_config(const RunConfig& cfg, const CorpusManifest* manifest) {
  SamplerConfig s;
  s.patch_size = cfg.get_int("patch_size");
  s.gap = cfg.get_int("gap");
  s.jitter = cfg.get_int("jitter");
  s.color_mode = color_mode_from_name(cfg.get("color_mode"));
  s.pixelation_prob = cfg.get_double("pixelation_prob");
  s.pixelation_min_px = cfg.get_int("pixelation_min_px");
  s.mean_mode = mean_mode_from_name(cfg.get("mean_mode"));
  if (s.patch_size < 1) throw ConfigError("patch_size must be positive");
  if (s.gap < 0 || s.jitter < 0) throw ConfigError("gap and jitter must be non-negative");
  if (s.pixelation_prob < 0.0 || s.pixelation_prob > 1.0) {
    throw ConfigError("pixelation_prob must lie in [0, 1]");
  }
  if (s.pixelation_min_px < 1) throw ConfigError("pixelation_min_px must be positive");
  if (s.mean_mode == MeanMode::kDataset) {
    if (manifest == nullptr) throw ConfigError("dataset mean mode needs a corpus manifest");
    s.dataset_mean = compute_dataset_mean(*manifest);
  }
  return s;
}

void bind_train(FlagSet& f, const char* steps, const char* batch, const char* lr) {
  f.opt("--steps", "steps", steps, "training steps");
  f.opt("--batch-size", "batch_size", batch, "pairs per step");
  f.opt("--lr", "lr", lr, "learning rate");
  f.opt("--momentum", "momentum", "0.999", "SGD momentum");
  f.opt("--lr-decay", "lr_decay", "1.0", "multiplier applied every lr_decay_every steps");
  f.opt("--lr-decay-every", "lr_decay_every", "0", "decay period, 0 disables");
  f.opt("--seed", "seed", "0", "run seed");
  f.opt("--eval-interval", "eval_interval", "200", "steps between validation passes");
  f.opt("--checkpoint-interval", "checkpoint_interval", "0", "periodic checkpoints, 0 disables");
  f.opt("--val-pairs", "val_pairs", "512", "validation pairs");
  f.opt("--threads", "threads", default_threads().c_str(), "worker threads");
  f.opt("--cache-images", "cache_images", "512", "decoded image cache capacity");
  f.flag("--quiet", "quiet", "suppress per-eval log lines");
}

TrainConfig train_from_config(const RunConfig& cfg, const std::string& out_dir) {
  TrainConfig t;
  t.steps = cfg.get_int("steps");
  t.batch_size = cfg.get_int("batch_size");
  t.lr = cfg.get_double("lr");
  t.momentum = cfg.get_double("momentum");
  t.lr_decay = cfg.get_double("lr_decay");
  t.lr_decay_every = cfg.get_int("lr_decay_every");
  t.seed = cfg.get_uint64("seed");
  t.eval_interval = cfg.get_int("eval_interval");
  t.checkpoint_interval = cfg.get_int("checkpoint_interval");
  t.val_pairs = cfg.get_int("val_pairs");
  t.threads = cfg.get_int("threads");
  t.cache_images = static_cast<size_t>(cfg.get_int64("cache_images"));
  t.out_dir = out_dir;
  t.quiet = cfg.get_bool("quiet");
  if (cfg.has("shuffle_labels")) t.shuffle_labels = cfg.get_bool("shuffle_labels");
  return t;
}

SceneStyle style_from_name(const std::string& name) {
  if (name == "structured") return SceneStyle::kStructured;
  if (name == "noise") return SceneStyle::kNoise;
  throw ConfigError("unknown scene style: " + name);
}

PairNetConfig pairnet_from_config(const RunConfig& cfg) {
  const std::string net = cfg.get("net");
  const int patch = cfg.get_int("patch_size");
  if (net == "desk-default") return desk_pairnet(patch);
  json j = load_json_file(net);
  PairNetConfig out;
  try {
    out.stack = netspec_from_json(j.at("stack"));
    out.fusion = netspec_from_json(j.at("fusion"));
  } catch (const json::exception& e) {
    throw IoError(IoErrorKind::kCorruptPayload, net + ": " + e.what());
  }
  out.patch_size = patch;
  return out;
}

NetSpec absloc_from_config(const RunConfig& cfg) {
  const std::string net = cfg.get("net");
  if (net == "desk-absloc") return desk_absloc_spec();
  json j = load_json_file(net);
  try {
    return netspec_from_json(j.is_array() ? j : j.at("stack"));
  } catch (const json::exception& e) {
    throw IoError(IoErrorKind::kCorruptPayload, net + ": " + e.what());
  }
}

ImageBuffer patch_preview(const Tensor& patch) {
  const int s = static_cast<int>(patch.dim(1));
  ImageBuffer img(s, s);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const double v = patch.data[(static_cast<size_t>(c) * s + y) * s + x];
        img.at(y, x, c) = static_cast<float>(std::clamp(v + 0.5, 0.0, 1.0));
      }
    }
  }
  return img;
}

std::vector<PatchRef> read_patch_list(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::kMissingFile, "cannot open patch list " + path);
  std::vector<PatchRef> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    out.push_back(PatchRef::parse(line));
  }
  return out;
}

void run_synth(FlagSet& flags) {
  RunConfig& cfg = flags.resolve();
  const std::string out = require_key(cfg, "out", "--out");
  SynthOptions opts;
  opts.style = style_from_name(cfg.get("style"));
  opts.min_side = cfg.get_int("min_side");
  opts.max_side = cfg.get_int("max_side");
  AberrationSpec ab;
  ab.enabled = cfg.get_bool("aberration");
  ab.green_scale = cfg.get_double("green_scale");
  CorpusManifest m =
      synth_corpus(cfg.get_int("images"), ab, cfg.get_uint64("seed"), out, opts);
  cfg.write_resolved(out, {"out"});
  write_artifact_index(out);
  std::printf("synth-corpus: %zu images under %s\n", m.entries.size(), out.c_str());
}

void run_sample_pairs(FlagSet& flags) {
  RunConfig& cfg = flags.resolve();
  const std::string out = require_key(cfg, "out", "--out");
  CorpusManifest m = load_manifest(require_key(cfg, "manifest", "--manifest"));
  if (m.entries.empty()) throw ConfigError("manifest is empty");
  SamplerConfig sampler = sampler_from_config(cfg, &m);
  const int n = cfg.get_int("pairs");
  const uint64_t seed = cfg.get_uint64("seed");
  const int dump = cfg.get_int("dump_png");
  ensure_dir(out);

  ImageCache cache(m, 64);
  std::ofstream bin(out + "/pairs.bin", std::ios::binary);
  if (!bin) throw IoError(IoErrorKind::kUnwritable, "cannot write " + out + "/pairs.bin");
  std::FILE* csv = std::fopen((out + "/pairs.csv").c_str(), "wb");
  if (csv == nullptr) {
    throw IoError(IoErrorKind::kUnwritable, "cannot write " + out + "/pairs.csv");
  }
  std::fprintf(csv, "index,image_id,label,row,col\n");
  for (int i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(i)));
    const int idx = static_cast<int>(rng.next_below(m.entries.size()));
    auto img = cache.get(idx);
    PatchPair pair = sample_pair(*img, m.entries[idx].image_id, sampler, rng);
    write_pair_record(bin, pair);
    std::fprintf(csv, "%d,%s,%d,%d,%d\n", i, pair.source_image.c_str(), pair.label, pair.row_a,
                 pair.col_a);
    if (i < dump) {
      char name[32];
      std::snprintf(name, sizeof(name), "/pair_%04d_a.png", i);
      save_png(patch_preview(pair.patch_a), out + name);
      std::snprintf(name, sizeof(name), "/pair_%04d_b.png", i);
      save_png(patch_preview(pair.patch_b), out + name);
    }
  }
  std::fclose(csv);
  bin.close();
  cfg.write_resolved(out, {"out"});
  write_artifact_index(out);
  std::printf("sample-pairs: %d records under %s\n", n, out.c_str());
}

void run_train_pretext(FlagSet& flags) {
  RunConfig& cfg = flags.resolve();
  const std::string out = require_key(cfg, "out", "--out");
  CorpusManifest train_m = load_manifest(require_key(cfg, "manifest", "--manifest"));
  std::optional<CorpusManifest> val_m;
  if (!cfg.get("val_manifest").empty()) val_m = load_manifest(cfg.get("val_manifest"));
  SamplerConfig sampler = sampler_from_config(cfg, &train_m);
  PairNetConfig net = pairnet_from_config(cfg);
  TrainConfig train = train_from_config(cfg, out);
  ensure_dir(out);

  TrainResult r = train_pairnet(net, sampler, train_m, val_m ? &*val_m : nullptr, train);

  json summary;
  summary["final_loss"] = r.final_loss;
  summary["final_val_accuracy"] = r.final_val_accuracy;
  summary["final_checkpoint"] = fs::path(r.final_checkpoint).filename().string();
  summary["steps"] = train.steps;
  summary["provenance"] =
      provenance_block(cfg, {{"checkpoint", r.final_checkpoint}}, &train.seed);
  write_json_file(out + "/summary.json", summary);
  cfg.write_resolved(out, {"out"});
  write_artifact_index(out);
  std::printf("train-pretext: final_loss %.6f val_acc %.4f\n", r.final_loss,
              r.final_val_accuracy);
}

void run_train_absloc(FlagSet& flags) {
  RunConfig& cfg = flags.resolve();
  const std::string out = require_key(cfg, "out", "--out");
  CorpusManifest train_m = load_manifest(require_key(cfg, "manifest", "--manifest"));
  SamplerConfig sampler = sampler_from_config(cfg, &train_m);
  NetSpec spec = absloc_from_config(cfg);
  TrainConfig train = train_from_config(cfg, out);
  ensure_dir(out);

  TrainResult r = train_absloc(spec, sampler, train_m, train);

  const CorpusManifest* eval_m = &train_m;
  std::optional<CorpusManifest> held_out;
  if (!cfg.get("eval_manifest").empty()) {
    held_out = load_manifest(cfg.get("eval_manifest"));
    eval_m = &*held_out;
  }
  RmseReport rep =
      rmse_report(r.final_checkpoint, *eval_m, cfg.get_int("eval_patches"), train.seed);

  json report;
  report["overall_rmse"] = rep.overall;
  report["top_decile_rmse"] = rep.top_decile;
  report["n_images"] = rep.per_image.size();
  json per = json::array();
  for (const auto& [id, rmse] : rep.per_image) per.push_back(json{{"image_id", id}, {"rmse", rmse}});
  report["per_image"] = per;
  report["reference_anchors"] = anchors_json();
  report["provenance"] =
      provenance_block(cfg, {{"checkpoint", r.final_checkpoint}}, &train.seed);
  write_json_file(out + "/rmse_report.json", report);
  cfg.write_resolved(out, {"out"});
  write_artifact_index(out);
  std::printf("train-absloc: final_loss %.6f rmse %.4f top_decile %.4f\n", r.final_loss,
              rep.overall, rep.top_decile);
}

void run_extract(FlagSet& flags) {
  RunConfig& cfg = flags.resolve();
  const std::string out = require_key(cfg, "out", "--out");
  const std::string ckpt = require_key(cfg, "checkpoint", "--checkpoint");
  CorpusManifest m = load_manifest(require_key(cfg, "manifest", "--manifest"));
  ExtractConfig ex;
  ex.stride = cfg.get_int("stride");
  ex.layer = cfg.get("layer");
  ex.batch = cfg.get_int("batch");
  if (!cfg.get("patches").empty()) ex.patches = read_patch_list(cfg.get("patches"));
  if (ex.stride < 1) throw ConfigError("stride must be positive");
  if (ex.batch < 1) throw ConfigError("batch must be positive");

  EmbeddingTable table = extract_embeddings(ckpt, m, ex);
  ensure_dir(out);
  save_embeddings(out + "/embeddings.emb", table);

  json summary;
  summary["rows"] = table.rows();
  summary["dim"] = table.dim;
  summary["provenance"] = provenance_block(cfg, {{"checkpoint", ckpt}}, nullptr);
  write_json_file(out + "/summary.json", summary);
  cfg.write_resolved(out, {"out"});
  write_artifact_index(out);
  std::printf("extract: %zu rows dim %d under %s\n", table.rows(), table.dim, out.c_str());
}

void run_knn(FlagSet& flags) {
  RunConfig& cfg = flags.resolve();
  const std::string out = require_key(cfg, "out", "--out");
  EmbeddingTable table = load_embeddings(require_key(cfg, "embeddings", "--embeddings"));
  PatchRef query = PatchRef::parse(require_key(cfg, "query", "--query"));
  const int k = cfg.get_int("k");
  if (k < 1) throw ConfigError("k must be positive");
  const int row = table.find_row(query);
  if (row < 0) {
    throw IoError(IoErrorKind::kDataMismatch,
                  "query patch " + query.str() + " is not in the embedding table");
  }
  std::vector<Neighbor> hits = knn_query(table, table.row(static_cast<size_t>(row)), k, &query);

  ensure_dir(out);
  std::FILE* csv = std::fopen((out + "/neighbors.csv").c_str(), "wb");
  if (csv == nullptr) {
    throw IoError(IoErrorKind::kUnwritable, "cannot write " + out + "/neighbors.csv");
  }
  std::fprintf(csv, "rank,image_id,y,x,size,score\n");
  for (size_t i = 0; i < hits.size(); ++i) {
    const Neighbor& n = hits[i];
    std::fprintf(csv, "%zu,%s,%d,%d,%d,%.6f\n", i, n.ref.image_id.c_str(), n.ref.y, n.ref.x,
                 n.ref.size, n.score);
  }
  std::fclose(csv);
  if (cfg.get_bool("montage")) {
    CorpusManifest m = load_manifest(require_key(cfg, "manifest", "--manifest"));
    montage_knn(table, m, query, k, out + "/knn.png");
  }
  cfg.write_resolved(out, {"out"});
  write_artifact_index(out);
  std::printf("knn: %zu neighbors of %s under %s\n", hits.size(), query.str().c_str(),
              out.c_str());
}

void run_mine(FlagSet& flags) {
  RunConfig& cfg = flags.resolve();
  const std::string out = require_key(cfg, "out", "--out");
  const std::string emb_path = require_key(cfg, "embeddings", "--embeddings");
  EmbeddingTable table = load_embeddings(emb_path);
  CorpusManifest m = load_manifest(require_key(cfg, "manifest", "--manifest"));
  MiningConfig mc;
  mc.n_seeds = cfg.get_int("seeds");
  mc.top_k = cfg.get_int("top_k");
  mc.seed = cfg.get_uint64("seed");
  if (mc.n_seeds < 1) throw ConfigError("seeds must be positive");
  if (mc.top_k < 1) throw ConfigError("top_k must be positive");

  std::vector<ClusterRecord> records = mine_constellations(table, m, mc);
  ensure_dir(out);
  save_clusters(out + "/clusters.jsonl", records);

  double mean_verify = 0.0;
  for (const ClusterRecord& r : records) mean_verify += r.verify_count;
  if (!records.empty()) mean_verify /= static_cast<double>(records.size());
  json summary;
  summary["n_records"] = records.size();
  summary["mean_verify_count"] = mean_verify;
  summary["provenance"] = provenance_block(cfg, {{"embeddings", emb_path}}, &mc.seed);
  write_json_file(out + "/summary.json", summary);
  cfg.write_resolved(out, {"out"});
  write_artifact_index(out);
  std::printf("mine: %zu clusters mean_verify %.4f under %s\n", records.size(), mean_verify,
              out.c_str());
}

void run_select(FlagSet& flags) {
  RunConfig& cfg = flags.resolve();
  const std::string out = require_key(cfg, "out", "--out");
  const std::string clusters_path = require_key(cfg, "clusters", "--clusters");
  std::vector<ClusterRecord> records = load_clusters(clusters_path);
  CorpusManifest m = load_manifest(require_key(cfg, "manifest", "--manifest"));
  const int n_sets = cfg.get_int("sets");
  if (n_sets < 1) throw ConfigError("sets must be positive");

  std::vector<SelectedSet> sel = select_clusters(records, m, n_sets);
  ensure_dir(out);
  save_selection(out + "/selection.jsonl", sel);
  json summary;
  summary["n_selected"] = sel.size();
  summary["provenance"] = provenance_block(cfg, {{"clusters", clusters_path}}, nullptr);
  write_json_file(out + "/summary.json", summary);
  cfg.write_resolved(out, {"out"});
  write_artifact_index(out);
  std::printf("select-clusters: %zu sets under %s\n", sel.size(), out.c_str());
}

void run_eval_purity(FlagSet& flags) {
  RunConfig& cfg = flags.resolve();
  const std::string out = require_key(cfg, "out", "--out");
  const std::string sel_path = require_key(cfg, "selection", "--selection");
  std::vector<SelectedSet> sel = load_selection(sel_path);
  CorpusManifest m = load_manifest(require_key(cfg, "manifest", "--manifest"));
  if (sel.empty()) throw ConfigError("selection is empty");

  std::vector<EvalSet> sets;
  sets.reserve(sel.size());
  for (const SelectedSet& s : sel) sets.push_back(make_eval_set(s.images, m));
  std::stable_sort(sets.begin(), sets.end(),
                   [](const EvalSet& a, const EvalSet& b) { return a.purity > b.purity; });
  PurityCoverageCurve curve = purity_coverage(sets, m);

  ensure_dir(out);
  std::FILE* csv = std::fopen((out + "/curve.csv").c_str(), "wb");
  if (csv == nullptr) {
    throw IoError(IoErrorKind::kUnwritable, "cannot write " + out + "/curve.csv");
  }
  std::fprintf(csv, "rank,coverage,avg_purity,set_purity,dominant_category\n");
  for (size_t i = 0; i < curve.points.size(); ++i) {
    const CurvePoint& p = curve.points[i];
    std::fprintf(csv, "%zu,%.6f,%.6f,%.6f,%s\n", i, p.coverage, p.avg_purity, p.set_purity,
                 p.dominant_category.c_str());
  }
  std::fclose(csv);

  json summary;
  summary["auc"] = curve.auc;
  summary["auc_at_half"] = curve.auc_at_half;
  summary["n_sets"] = sets.size();
  summary["provenance"] = provenance_block(cfg, {{"selection", sel_path}}, nullptr);
  write_json_file(out + "/purity.json", summary);
  cfg.write_resolved(out, {"out"});
  write_artifact_index(out);
  std::printf("eval-purity: auc %.4f auc_at_half %.4f over %zu sets\n", curve.auc,
              curve.auc_at_half, sets.size());
}

void run_eval_pretext(FlagSet& flags) {
  RunConfig& cfg = flags.resolve();
  const std::string out = require_key(cfg, "out", "--out");
  const std::string ckpt = require_key(cfg, "checkpoint", "--checkpoint");
  CorpusManifest m = load_manifest(require_key(cfg, "manifest", "--manifest"));
  const uint64_t seed = cfg.get_uint64("seed");
  PretextReport rep = pretext_accuracy(ckpt, m, cfg.get_int("images"),
                                       cfg.get_int("pairs_per_image"), seed,
                                       cfg.get_bool("balanced"));

  json report;
  report["n_pairs"] = rep.n_pairs;
  report["accuracy"] = rep.accuracy;
  report["per_class_accuracy"] = rep.per_class_accuracy;
  json confusion = json::array();
  for (const auto& row : rep.confusion) confusion.push_back(row);
  report["confusion"] = confusion;
  report["reference_anchors"] = anchors_json();
  json prov = provenance_block(cfg, {}, &seed);
  prov["checkpoint_hash"] = rep.checkpoint_hash;
  report["provenance"] = prov;
  ensure_dir(out);
  write_json_file(out + "/pretext_report.json", report);
  cfg.write_resolved(out, {"out"});
  write_artifact_index(out);
  std::printf("eval-pretext: accuracy %.4f over %d pairs\n", rep.accuracy, rep.n_pairs);
}

void run_chance_rmse(FlagSet& flags) {
  RunConfig& cfg = flags.resolve();
  CorpusManifest m = load_manifest(require_key(cfg, "manifest", "--manifest"));
  SamplerConfig sampler = sampler_from_config(cfg, &m);
  const int n = cfg.get_int("samples");
  const uint64_t seed = cfg.get_uint64("seed");
  const double rmse = chance_rmse(m, sampler, n, seed);
  std::printf("chance_rmse %.6f\n", rmse);
  const std::string out = cfg.get("out");
  if (!out.empty()) {
    ensure_dir(out);
    json report;
    report["rmse"] = rmse;
    report["n_samples"] = n;
    report["reference_anchors"] = anchors_json();
    report["provenance"] = provenance_block(cfg, {}, &seed);
    write_json_file(out + "/chance_rmse.json", report);
    cfg.write_resolved(out, {"out"});
    write_artifact_index(out);
  }
}

void run_grad_check(FlagSet& flags) {
  RunConfig& cfg = flags.resolve();
  const std::string net = cfg.get("net");
  const int patch = cfg.get_int("patch_size");
  const int batch = cfg.get_int("batch_size");
  if (batch < 2) throw ConfigError("batch_size must be at least 2 for batch norm");
  const uint64_t seed = cfg.get_uint64("seed");
  GradCheckOptions opts;
  opts.h = cfg.get_double("h");
  opts.coords_per_param = cfg.get_int("coords");

  Rng data_rng(derive_seed(seed, 0xDA7Aull));
  Rng check_rng(derive_seed(seed, 0xC4ECull));
  GradCheckReport rep;
  if (net == "desk-default") {
    PairNet pn(desk_pairnet(patch), seed);
    Tensor a({batch, 3, patch, patch}), b({batch, 3, patch, patch});
    for (double& v : a.data) v = data_rng.uniform(-0.5, 0.5);
    for (double& v : b.data) v = data_rng.uniform(-0.5, 0.5);
    std::vector<int> labels(static_cast<size_t>(batch));
    for (int& l : labels) l = static_cast<int>(data_rng.next_below(kNumRelativeLabels));
    auto loss_fn = [&] { return softmax_xent(pn.forward(a, b, Phase::kTrain), labels).loss; };
    auto compute = [&] {
      pn.zero_grad();
      SoftmaxXentResult r = softmax_xent(pn.forward(a, b, Phase::kTrain), labels);
      pn.backward(r.dlogits);
    };
    rep = grad_check(loss_fn, compute, pn.params(), check_rng, opts);
  } else if (net == "desk-absloc") {
    Rng init(derive_seed(seed, 0xAB51ull));
    Net n(desk_absloc_spec(), {3, patch, patch}, init);
    Tensor x({batch, 3, patch, patch}), targets({batch, 2});
    for (double& v : x.data) v = data_rng.uniform(-0.5, 0.5);
    for (double& v : targets.data) v = data_rng.uniform();
    auto loss_fn = [&] { return l2_loss(n.forward(x, Phase::kTrain), targets).loss; };
    auto compute = [&] {
      n.zero_grad();
      L2LossResult r = l2_loss(n.forward(x, Phase::kTrain), targets);
      n.backward(r.dpred);
    };
    rep = grad_check(loss_fn, compute, n.params(), check_rng, opts);
  } else {
    throw ConfigError("unknown net: " + net + " (expected desk-default or desk-absloc)");
  }

  for (const GradCheckEntry& e : rep.per_param) {
    std::printf("param %-14s checked %4d skipped %3d max_rel %.3g\n", e.param.c_str(), e.checked,
                e.skipped, e.max_rel_err);
  }
  std::printf("grad-check: max_rel_err %.3g checked %d skipped %d\n", rep.max_rel_err,
              rep.total_checked, rep.total_skipped);

  const std::string out = cfg.get("out");
  if (!out.empty()) {
    ensure_dir(out);
    json report;
    report["max_rel_err"] = rep.max_rel_err;
    report["total_checked"] = rep.total_checked;
    report["total_skipped"] = rep.total_skipped;
    json per = json::array();
    for (const GradCheckEntry& e : rep.per_param) {
      per.push_back(json{{"param", e.param},
                         {"max_rel_err", e.max_rel_err},
                         {"checked", e.checked},
                         {"skipped", e.skipped}});
    }
    report["per_param"] = per;
    report["provenance"] = provenance_block(cfg, {}, &seed);
    write_json_file(out + "/gradcheck_report.json", report);
    cfg.write_resolved(out, {"out"});
    write_artifact_index(out);
  }
  if (rep.max_rel_err >= 1e-3) {
    char msg[96];
    std::snprintf(msg, sizeof(msg), "gradient check failed: max rel err %.3g", rep.max_rel_err);
    throw NumericError(msg);
  }
  if (rep.skipped_fraction() >= 0.05) {
    throw NumericError("gradient check skipped too many coordinates");
  }
}

void run_montage(FlagSet& flags) {
  RunConfig& cfg = flags.resolve();
  const std::string out = require_key(cfg, "out", "--out");
  CorpusManifest m = load_manifest(require_key(cfg, "manifest", "--manifest"));
  const bool cluster_mode = !cfg.get("clusters").empty();
  const bool knn_mode = !cfg.get("embeddings").empty() || !cfg.get("query").empty();
  if (cluster_mode == knn_mode) {
    throw ConfigError("montage needs either --clusters or --embeddings with --query");
  }
  ensure_dir(out);
  if (cluster_mode) {
    std::vector<ClusterRecord> records = load_clusters(cfg.get("clusters"));
    const int rank = cfg.get_int("rank");
    if (rank < 0 || rank >= static_cast<int>(records.size())) {
      throw ConfigError("cluster rank out of range");
    }
    montage_cluster(records[static_cast<size_t>(rank)], m, cfg.get_int("max_matches"),
                    out + "/montage.png");
  } else {
    EmbeddingTable table = load_embeddings(require_key(cfg, "embeddings", "--embeddings"));
    PatchRef query = PatchRef::parse(require_key(cfg, "query", "--query"));
    montage_knn(table, m, query, cfg.get_int("k"), out + "/montage.png");
  }
  cfg.write_resolved(out, {"out"});
  write_artifact_index(out);
  std::printf("montage: %s/montage.png\n", out.c_str());
}

std::shared_ptr<FlagSet> make_cmd(CLI::App& app, const std::string& name, const std::string& desc,
                                  void (*body)(FlagSet&)) {
  CLI::App* cmd = app.add_subcommand(name, desc);
  auto fs = std::make_shared<FlagSet>(cmd);
  cmd->callback([fs, body] { body(*fs); });
  return fs;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"self-supervised patch-context toolkit"};
  app.require_subcommand(1);

  {
    auto f = make_cmd(app, "synth-corpus", "render a synthetic corpus with a manifest", run_synth);
    f->opt("--out", "out", "", "output corpus directory");
    f->opt("--images", "images", "200", "number of images");
    f->opt("--seed", "seed", "0", "generation seed");
    f->opt("--style", "style", "structured", "structured | noise");
    f->opt("--min-side", "min_side", "256", "minimum image side");
    f->opt("--max-side", "max_side", "352", "maximum image side");
    f->flag("--aberration", "aberration", "rescale the green plane toward the center");
    f->opt("--green-scale", "green_scale", "0.98", "green plane scale in [0.9, 1]");
  }
  {
    auto f = make_cmd(app, "sample-pairs", "draw preprocessed patch pairs into a record file",
                      run_sample_pairs);
    f->opt("--manifest", "manifest", "", "corpus manifest");
    f->opt("--out", "out", "", "output directory");
    f->opt("--pairs", "pairs", "64", "number of pairs");
    f->opt("--seed", "seed", "0", "sampling seed");
    f->opt("--dump-png", "dump_png", "0", "also dump the first N pairs as PNGs");
    bind_sampler(*f, "96", "48", "7");
  }
  {
    auto f = make_cmd(app, "train-pretext", "train the relative-position pair classifier",
                      run_train_pretext);
    f->opt("--manifest", "manifest", "", "training corpus manifest");
    f->opt("--val-manifest", "val_manifest", "", "held-out corpus for validation");
    f->opt("--out", "out", "", "output directory");
    f->opt("--net", "net", "desk-default", "desk-default or a net description file");
    f->flag("--shuffle-labels", "shuffle_labels", "randomize labels after sampling (control runs)");
    bind_sampler(*f, "32", "16", "3");
    bind_train(*f, "1000", "16", "0.01");
  }
  {
    auto f = make_cmd(app, "train-absloc", "train the absolute-position regression baseline",
                      run_train_absloc);
    f->opt("--manifest", "manifest", "", "training corpus manifest");
    f->opt("--out", "out", "", "output directory");
    f->opt("--net", "net", "desk-absloc", "desk-absloc or a net description file");
    f->opt("--eval-manifest", "eval_manifest", "", "corpus for the post-training report");
    f->opt("--eval-patches", "eval_patches", "8", "patches per image in the report");
    bind_sampler(*f, "32", "16", "3");
    bind_train(*f, "1000", "16", "0.01");
  }
  {
    auto f = make_cmd(app, "extract", "extract patch embeddings over a dense grid", run_extract);
    f->opt("--checkpoint", "checkpoint", "", "pair-classifier checkpoint");
    f->opt("--manifest", "manifest", "", "corpus manifest");
    f->opt("--out", "out", "", "output directory");
    f->opt("--stride", "stride", "16", "grid stride in pixels");
    f->opt("--layer", "layer", "", "trunk layer to tap, default from the checkpoint");
    f->opt("--patches", "patches", "", "file with one image_id:y:x:size per line");
    f->opt("--batch", "batch", "64", "patches per forward pass");
  }
  {
    auto f = make_cmd(app, "knn", "nearest neighbors of one embedded patch", run_knn);
    f->opt("--embeddings", "embeddings", "", "embedding table");
    f->opt("--manifest", "manifest", "", "corpus manifest (for --montage)");
    f->opt("--query", "query", "", "query patch image_id:y:x:size");
    f->opt("--k", "k", "8", "neighbors to return");
    f->opt("--out", "out", "", "output directory");
    f->flag("--montage", "montage", "also render the neighbors as a PNG strip");
  }
  {
    auto f = make_cmd(app, "mine", "mine recurring 2x2 patch constellations", run_mine);
    f->opt("--embeddings", "embeddings", "", "embedding table");
    f->opt("--manifest", "manifest", "", "corpus manifest");
    f->opt("--out", "out", "", "output directory");
    f->opt("--seeds", "seeds", "512", "constellation seeds to try");
    f->opt("--top-k", "top_k", "100", "images kept per constellation");
    f->opt("--seed", "seed", "0", "mining seed");
  }
  {
    auto f = make_cmd(app, "select-clusters", "greedy coverage selection of verified clusters",
                      run_select);
    f->opt("--clusters", "clusters", "", "mined clusters file");
    f->opt("--manifest", "manifest", "", "corpus manifest");
    f->opt("--out", "out", "", "output directory");
    f->opt("--sets", "sets", "20", "number of sets to select");
  }
  {
    auto f = make_cmd(app, "eval-purity", "purity-coverage curve of a selection", run_eval_purity);
    f->opt("--selection", "selection", "", "selected sets file");
    f->opt("--manifest", "manifest", "", "corpus manifest with categories");
    f->opt("--out", "out", "", "output directory");
  }
  {
    auto f = make_cmd(app, "eval-pretext", "relative-position accuracy of a checkpoint",
                      run_eval_pretext);
    f->opt("--checkpoint", "checkpoint", "", "pair-classifier checkpoint");
    f->opt("--manifest", "manifest", "", "corpus manifest");
    f->opt("--out", "out", "", "output directory");
    f->opt("--images", "images", "200", "images to sample");
    f->opt("--pairs-per-image", "pairs_per_image", "64", "pairs drawn per image");
    f->opt("--balanced", "balanced", "true", "draw the same number of pairs per label");
    f->opt("--seed", "seed", "0", "sampling seed");
  }
  {
    auto f = make_cmd(app, "chance-rmse", "RMSE of the constant center predictor",
                      run_chance_rmse);
    f->opt("--manifest", "manifest", "", "corpus manifest");
    f->opt("--out", "out", "", "optional output directory");
    f->opt("--samples", "samples", "2000", "Monte-Carlo samples (>= 1000)");
    f->opt("--seed", "seed", "0", "sampling seed");
    bind_sampler(*f, "96", "48", "7");
  }
  {
    auto f = make_cmd(app, "grad-check", "finite-difference check of a full net", run_grad_check);
    f->opt("--net", "net", "desk-default", "desk-default | desk-absloc");
    f->opt("--patch-size", "patch_size", "32", "input patch side");
    f->opt("--batch-size", "batch_size", "2", "batch rows (>= 2)");
    f->opt("--coords", "coords", "50", "coordinates probed per parameter");
    f->opt("--fd-h", "h", "1e-5", "central-difference step");
    f->opt("--seed", "seed", "0", "probe seed");
    f->opt("--out", "out", "", "optional output directory");
  }
  {
    auto f = make_cmd(app, "montage", "render neighbors or a mined cluster as one PNG",
                      run_montage);
    f->opt("--manifest", "manifest", "", "corpus manifest");
    f->opt("--out", "out", "", "output directory");
    f->opt("--embeddings", "embeddings", "", "embedding table (neighbor mode)");
    f->opt("--query", "query", "", "query patch image_id:y:x:size (neighbor mode)");
    f->opt("--k", "k", "8", "neighbors to render");
    f->opt("--clusters", "clusters", "", "mined clusters file (cluster mode)");
    f->opt("--rank", "rank", "0", "cluster index in rank order");
    f->opt("--max-matches", "max_matches", "5", "matches rendered below the seed row");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const IoError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return 3;
  }
  return 0;
}
