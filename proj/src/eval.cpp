#include "patchwork/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "patchwork/errors.hpp"
#include "patchwork/hash.hpp"
#include "patchwork/pretext.hpp"

namespace patchwork {

EvalSet make_eval_set(const std::vector<std::string>& images, const CorpusManifest& manifest) {
  if (images.size() != 10) {
    throw ConfigError("an evaluation set holds exactly 10 images, got " +
                      std::to_string(images.size()));
  }
  std::map<std::string, int> counts;
  for (const std::string& id : images) {
    const ManifestEntry* e = manifest.find(id);
    if (e == nullptr) {
      throw IoError(IoErrorKind::kDataMismatch, "set image " + id + " is not in the manifest");
    }
    ++counts[e->category];
  }
  EvalSet set;
  set.images = images;
  int best = -1;
  for (const auto& [cat, n] : counts) {  // map order: ties resolve to the smallest name
    if (n > best) {
      best = n;
      set.dominant_category = cat;
    }
  }
  set.purity = best / 10.0;
  return set;
}

PurityCoverageCurve purity_coverage(const std::vector<EvalSet>& ranked_sets,
                                    const CorpusManifest& manifest) {
  if (ranked_sets.empty()) throw ConfigError("purity-coverage needs at least one set");
  if (manifest.entries.empty()) throw ConfigError("purity-coverage needs a non-empty manifest");
  for (size_t i = 1; i < ranked_sets.size(); ++i) {
    if (ranked_sets[i].purity > ranked_sets[i - 1].purity + 1e-12) {
      throw ConfigError("sets must be ordered by non-increasing purity");
    }
  }
  PurityCoverageCurve curve;
  std::set<std::string> covered;
  double purity_sum = 0.0;
  const double n_total = static_cast<double>(manifest.entries.size());
  for (size_t i = 0; i < ranked_sets.size(); ++i) {
    const EvalSet& s = ranked_sets[i];
    for (const std::string& id : s.images) covered.insert(id);
    purity_sum += s.purity;
    CurvePoint p;
    p.coverage = static_cast<double>(covered.size()) / n_total;
    p.avg_purity = purity_sum / static_cast<double>(i + 1);
    p.set_purity = s.purity;
    p.dominant_category = s.dominant_category;
    curve.points.push_back(std::move(p));
  }

  auto area_to = [&](double limit) {
    double area = 0.0;
    const CurvePoint& first = curve.points.front();
    area += std::min(first.coverage, limit) * first.avg_purity;
    for (size_t i = 1; i < curve.points.size(); ++i) {
      const double c0 = curve.points[i - 1].coverage;
      const double c1 = curve.points[i].coverage;
      const double y0 = curve.points[i - 1].avg_purity;
      const double y1 = curve.points[i].avg_purity;
      if (c0 >= limit) break;
      const double ce = std::min(c1, limit);
      if (ce <= c0) continue;
      const double ye = c1 == c0 ? y1 : y0 + (y1 - y0) * (ce - c0) / (c1 - c0);
      area += (ce - c0) * (y0 + ye) / 2.0;
    }
    return area;
  };
  curve.auc = area_to(1.0);
  curve.auc_at_half = area_to(0.5);
  return curve;
}

PretextReport pretext_accuracy(const std::string& ckpt_path, const CorpusManifest& manifest,
                               int n_images, int pairs_per_image, uint64_t seed, bool balanced) {
  if (n_images < 1 || pairs_per_image < 1) {
    throw ConfigError("pretext evaluation needs n_images >= 1 and pairs_per_image >= 1");
  }
  if (manifest.entries.empty()) throw ConfigError("pretext evaluation manifest is empty");
  CheckpointMeta meta;
  PairNet net = load_pairnet(ckpt_path, &meta);
  const SamplerConfig& sampler = meta.sampler;
  const int p = meta.pair_cfg.patch_size;

  // Distinct image choice via partial Fisher-Yates when the corpus is larger
  // than the request.
  std::vector<int> indices(manifest.entries.size());
  for (size_t i = 0; i < indices.size(); ++i) indices[i] = static_cast<int>(i);
  const size_t n_chosen = std::min<size_t>(static_cast<size_t>(n_images), indices.size());
  {
    Rng rng(derive_seed(seed, 0xC405Eull));
    for (size_t i = 0; i < n_chosen; ++i) {
      const size_t j = i + rng.next_below(indices.size() - i);
      std::swap(indices[i], indices[j]);
    }
    indices.resize(n_chosen);
  }

  PretextReport report;
  report.seed = seed;
  report.checkpoint_hash = hash_file(ckpt_path);
  int correct = 0;
  for (size_t pos = 0; pos < indices.size(); ++pos) {
    const auto& entry = manifest.entries[static_cast<size_t>(indices[pos])];
    ImageBuffer img = load_image(manifest.resolve_path(entry));
    Rng rng(derive_seed(seed, 0x7E57ull, pos));
    Tensor a({pairs_per_image, 3, p, p});
    Tensor b({pairs_per_image, 3, p, p});
    std::vector<int> labels(static_cast<size_t>(pairs_per_image));
    const int64_t elems = 3LL * p * p;
    for (int j = 0; j < pairs_per_image; ++j) {
      PatchPair pair = balanced
                           ? sample_pair_with_label(img, entry.image_id, sampler,
                                                    j % kNumRelativeLabels, rng)
                           : sample_pair(img, entry.image_id, sampler, rng);
      std::copy(pair.patch_a.data.begin(), pair.patch_a.data.end(), a.data.begin() + j * elems);
      std::copy(pair.patch_b.data.begin(), pair.patch_b.data.end(), b.data.begin() + j * elems);
      labels[static_cast<size_t>(j)] = pair.label;
    }
    const int64_t chunk = 64;
    for (int64_t at = 0; at < pairs_per_image; at += chunk) {
      const int64_t n = std::min<int64_t>(chunk, pairs_per_image - at);
      Tensor ca({n, 3, p, p}), cb({n, 3, p, p});
      std::copy_n(a.ptr() + at * elems, n * elems, ca.ptr());
      std::copy_n(b.ptr() + at * elems, n * elems, cb.ptr());
      std::vector<int> cl(labels.begin() + at, labels.begin() + at + n);
      Tensor logits = net.forward(ca, cb, Phase::kInfer);
      if (!logits.all_finite()) {
        throw NumericError("non-finite logits while evaluating " + ckpt_path);
      }
      SoftmaxXentResult res = softmax_xent(logits, cl);
      for (int64_t i = 0; i < n; ++i) {
        const int t = cl[static_cast<size_t>(i)];
        const int pr = res.predictions[static_cast<size_t>(i)];
        ++report.confusion[static_cast<size_t>(t)][static_cast<size_t>(pr)];
        correct += t == pr;
        ++report.n_pairs;
      }
    }
  }
  report.accuracy = static_cast<double>(correct) / report.n_pairs;
  for (int t = 0; t < kNumRelativeLabels; ++t) {
    int row = 0;
    for (int pr = 0; pr < kNumRelativeLabels; ++pr) row += report.confusion[t][pr];
    report.per_class_accuracy[static_cast<size_t>(t)] =
        row > 0 ? static_cast<double>(report.confusion[t][t]) / row : 0.0;
  }
  return report;
}

double rmse_of_constant(const std::vector<std::array<double, 2>>& centers, double px, double py) {
  if (centers.empty()) throw ConfigError("rmse of an empty center list");
  double sum = 0.0;
  for (const auto& c : centers) {
    const double dx = px - c[0];
    const double dy = py - c[1];
    sum += dx * dx + dy * dy;
  }
  return std::sqrt(sum / static_cast<double>(centers.size()));
}

double chance_rmse(const CorpusManifest& manifest, const SamplerConfig& cfg, int n_samples,
                   uint64_t seed) {
  if (n_samples < 1000) {
    throw ConfigError("chance baseline needs n_samples >= 1000, got " +
                      std::to_string(n_samples));
  }
  if (manifest.entries.empty()) throw ConfigError("chance baseline manifest is empty");
  ImageCache cache(manifest, 256);
  double sum = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    Rng rng(derive_seed(seed, static_cast<uint64_t>(i)));
    const int idx = static_cast<int>(rng.next_below(manifest.entries.size()));
    auto img = cache.get(idx);
    std::vector<GridCell> cells = single_positions(*img, cfg, rng);
    const GridCell& cell = cells[rng.next_below(cells.size())];
    auto [cx, cy] = patch_center_target(cell, cfg.patch_size, img->width, img->height);
    sum += (cx - 0.5) * (cx - 0.5) + (cy - 0.5) * (cy - 0.5);
  }
  return std::sqrt(sum / n_samples);
}

void rmse_aggregate(RmseReport& report) {
  if (report.per_image.empty()) throw ConfigError("rmse report with no images");
  std::sort(report.per_image.begin(), report.per_image.end(),
            [](const auto& a, const auto& b) {
              if (a.second != b.second) return a.second < b.second;
              return a.first < b.first;
            });
  double sum = 0.0;
  for (const auto& [id, rmse] : report.per_image) sum += rmse;
  report.overall = sum / static_cast<double>(report.per_image.size());
  const size_t n_top = std::max<size_t>(1, report.per_image.size() / 10);
  double top = 0.0;
  for (size_t i = 0; i < n_top; ++i) top += report.per_image[i].second;
  report.top_decile = top / static_cast<double>(n_top);
}

RmseReport rmse_report(const std::string& ckpt_path, const CorpusManifest& manifest,
                       int patches_per_image, uint64_t seed) {
  if (patches_per_image < 1) throw ConfigError("rmse report needs patches_per_image >= 1");
  if (manifest.entries.empty()) throw ConfigError("rmse report manifest is empty");
  CheckpointMeta meta = load_checkpoint_meta(ckpt_path);
  if (meta.kind != "absloc") {
    throw ConfigError("expected an absolute-position checkpoint at " + ckpt_path +
                      ", got kind '" + meta.kind + "'");
  }
  const int p = meta.sampler.patch_size;
  Rng dummy(0);
  Net net(meta.absloc_spec, {3, p, p}, dummy);
  restore_net(net, load_checkpoint(ckpt_path));

  RmseReport report;
  report.seed = seed;
  report.checkpoint_hash = hash_file(ckpt_path);
  const int64_t elems = 3LL * p * p;
  for (size_t idx = 0; idx < manifest.entries.size(); ++idx) {
    const auto& entry = manifest.entries[idx];
    ImageBuffer img = load_image(manifest.resolve_path(entry));
    Rng rng(derive_seed(seed, idx));
    Tensor batch({patches_per_image, 3, p, p});
    Tensor targets({patches_per_image, 2});
    for (int j = 0; j < patches_per_image; ++j) {
      std::vector<GridCell> cells = single_positions(img, meta.sampler, rng);
      const GridCell& cell = cells[rng.next_below(cells.size())];
      Tensor patch = crop_patch(img, cell.y, cell.x, p);
      preprocess_patch(patch, meta.sampler, rng);
      std::copy(patch.data.begin(), patch.data.end(), batch.data.begin() + j * elems);
      auto [cx, cy] = patch_center_target(cell, p, img.width, img.height);
      targets.at2(j, 0) = cx;
      targets.at2(j, 1) = cy;
    }
    Tensor pred = net.forward(batch, Phase::kInfer);
    if (!pred.all_finite()) {
      throw NumericError("non-finite predictions while evaluating " + ckpt_path);
    }
    double sum = 0.0;
    for (int j = 0; j < patches_per_image; ++j) {
      const double dx = pred.at2(j, 0) - targets.at2(j, 0);
      const double dy = pred.at2(j, 1) - targets.at2(j, 1);
      sum += dx * dx + dy * dy;
    }
    report.per_image.emplace_back(entry.image_id, std::sqrt(sum / patches_per_image));
  }
  rmse_aggregate(report);
  return report;
}

}  // namespace patchwork
