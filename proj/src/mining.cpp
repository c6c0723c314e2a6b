#include "patchwork/mining.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>

#include <json.hpp>

#include "patchwork/errors.hpp"
#include "patchwork/rng.hpp"

using nlohmann::json;

namespace patchwork {

namespace {
// Unit square directions in (x, y) with y down: TL, TR, BL, BR.
constexpr double kDirs[4][2] = {{-0.5, -0.5}, {0.5, -0.5}, {-0.5, 0.5}, {0.5, 0.5}};
}  // namespace

SquareFit fit_square(const std::array<std::array<double, 2>, 4>& points_xy, double avg_side) {
  if (!(avg_side > 0.0)) throw ConfigError("fit_square needs a positive average side");
  SquareFit fit;
  double cx = 0.0, cy = 0.0;
  for (const auto& p : points_xy) {
    cx += p[0];
    cy += p[1];
  }
  cx /= 4.0;
  cy /= 4.0;
  fit.cx = cx;
  fit.cy = cy;

  const double lo = 2.0 / 3.0 * avg_side;
  const double hi = 4.0 / 3.0 * avg_side;

  bool degenerate = true;
  for (int i = 1; i < 4; ++i) {
    if (points_xy[static_cast<size_t>(i)] != points_xy[0]) {
      degenerate = false;
      break;
    }
  }
  if (degenerate) {
    fit.side = lo;
    fit.normalized_error = std::numeric_limits<double>::infinity();
    fit.verified = false;
    return fit;
  }

  // The centroid is optimal for any scale because the directions sum to
  // zero, so center and scale separate. Sum of |d_i|^2 is 2.
  double s = 0.0;
  for (int i = 0; i < 4; ++i) {
    s += (points_xy[static_cast<size_t>(i)][0] - cx) * kDirs[i][0] +
         (points_xy[static_cast<size_t>(i)][1] - cy) * kDirs[i][1];
  }
  s /= 2.0;
  s = std::clamp(s, lo, hi);
  fit.side = s;

  double sse = 0.0;
  for (int i = 0; i < 4; ++i) {
    const double rx = points_xy[static_cast<size_t>(i)][0] - cx - s * kDirs[i][0];
    const double ry = points_xy[static_cast<size_t>(i)][1] - cy - s * kDirs[i][1];
    sse += rx * rx + ry * ry;
  }
  fit.normalized_error = sse / (s * s);
  fit.verified = fit.normalized_error < 1.0;
  return fit;
}

std::vector<ClusterRecord> mine_constellations(const EmbeddingTable& table,
                                               const CorpusManifest& manifest,
                                               const MiningConfig& cfg) {
  if (cfg.n_seeds < 1) throw ConfigError("mining needs n_seeds >= 1");
  if (cfg.top_k < 1) throw ConfigError("mining needs top_k >= 1");
  if (table.rows() == 0) {
    throw IoError(IoErrorKind::kDataMismatch, "embedding table is empty");
  }
  const auto ranges = table.image_ranges();
  if (ranges.size() < static_cast<size_t>(cfg.top_k) + 1) {
    throw IoError(IoErrorKind::kDataMismatch,
                  "corpus provides " + std::to_string(ranges.size()) +
                      " images with embeddings but top-K matching needs at least " +
                      std::to_string(cfg.top_k + 1));
  }
  (void)manifest;

  const int patch = table.refs[0].size;
  std::vector<std::string> image_ids;
  image_ids.reserve(ranges.size());
  for (const auto& [id, range] : ranges) image_ids.push_back(id);

  // Anchors: grid positions whose right, lower and diagonal neighbors at
  // one patch side distance also carry embeddings.
  std::unordered_map<std::string, std::vector<size_t>> anchors;
  for (const auto& [id, range] : ranges) {
    std::vector<size_t>& list = anchors[id];
    for (size_t i = range.first; i < range.second; ++i) {
      const PatchRef& r = table.refs[i];
      const PatchRef tr{id, r.y, r.x + patch, patch};
      const PatchRef bl{id, r.y + patch, r.x, patch};
      const PatchRef br{id, r.y + patch, r.x + patch, patch};
      if (table.find_row(tr) >= 0 && table.find_row(bl) >= 0 && table.find_row(br) >= 0) {
        list.push_back(i);
      }
    }
  }

  std::vector<ClusterRecord> records;
  for (int seed_idx = 0; seed_idx < cfg.n_seeds; ++seed_idx) {
    Rng rng(derive_seed(cfg.seed, static_cast<uint64_t>(seed_idx)));
    int anchor_row = -1;
    std::string seed_image;
    for (int attempt = 0; attempt < 100 && anchor_row < 0; ++attempt) {
      const std::string& id = image_ids[rng.next_below(image_ids.size())];
      const auto& list = anchors[id];
      if (list.empty()) continue;
      anchor_row = static_cast<int>(list[rng.next_below(list.size())]);
      seed_image = id;
    }
    if (anchor_row < 0) continue;

    const PatchRef& a = table.refs[static_cast<size_t>(anchor_row)];
    ClusterRecord rec;
    rec.seed_image = seed_image;
    rec.roles = {ConstellationRole{a.y, a.x, patch}, ConstellationRole{a.y, a.x + patch, patch},
                 ConstellationRole{a.y + patch, a.x, patch},
                 ConstellationRole{a.y + patch, a.x + patch, patch}};
    int role_rows[4];
    for (int r = 0; r < 4; ++r) {
      role_rows[r] = table.find_row(
          PatchRef{seed_image, rec.roles[static_cast<size_t>(r)].y,
                   rec.roles[static_cast<size_t>(r)].x, patch});
    }

    std::vector<ClusterMatch> candidates;
    candidates.reserve(ranges.size() - 1);
    for (const auto& [id, range] : ranges) {
      if (id == seed_image) continue;
      ClusterMatch m;
      m.image_id = id;
      m.score = 0.0;
      for (int r = 0; r < 4; ++r) {
        const float* role_vec = table.row(static_cast<size_t>(role_rows[r]));
        double best = -std::numeric_limits<double>::infinity();
        size_t best_row = range.first;
        for (size_t i = range.first; i < range.second; ++i) {
          const double score = normalized_correlation(role_vec, table.row(i), table.dim);
          if (score > best) {  // strict: ties keep the first row in (y, x) order
            best = score;
            best_row = i;
          }
        }
        const PatchRef& pr = table.refs[best_row];
        m.centers[static_cast<size_t>(r)] = {pr.x + patch / 2.0, pr.y + patch / 2.0};
        m.score += best;
      }
      candidates.push_back(std::move(m));
    }
    std::sort(candidates.begin(), candidates.end(),
              [](const ClusterMatch& x, const ClusterMatch& y) {
                if (x.score != y.score) return x.score > y.score;
                return x.image_id < y.image_id;
              });
    candidates.resize(static_cast<size_t>(cfg.top_k));
    for (ClusterMatch& m : candidates) {
      const SquareFit fit = fit_square(m.centers, static_cast<double>(patch));
      m.normalized_error = fit.normalized_error;
      m.verified = fit.verified;
      rec.verify_count += fit.verified;
    }
    rec.matches = std::move(candidates);
    records.push_back(std::move(rec));
  }

  std::sort(records.begin(), records.end(), [](const ClusterRecord& a, const ClusterRecord& b) {
    if (a.verify_count != b.verify_count) return a.verify_count > b.verify_count;
    if (a.seed_image != b.seed_image) return a.seed_image < b.seed_image;
    if (a.roles[0].y != b.roles[0].y) return a.roles[0].y < b.roles[0].y;
    return a.roles[0].x < b.roles[0].x;
  });
  return records;
}

namespace {

json match_to_json(const ClusterMatch& m) {
  json centers = json::array();
  for (const auto& c : m.centers) centers.push_back({c[0], c[1]});
  json j{{"image_id", m.image_id},
         {"centers", centers},
         {"score", m.score},
         {"verified", m.verified}};
  if (std::isfinite(m.normalized_error)) {
    j["normalized_error"] = m.normalized_error;
  } else {
    j["normalized_error"] = nullptr;  // +inf has no JSON literal
  }
  return j;
}

ClusterMatch match_from_json(const json& j) {
  ClusterMatch m;
  m.image_id = j.at("image_id").get<std::string>();
  const json& centers = j.at("centers");
  for (size_t i = 0; i < 4; ++i) {
    m.centers[i] = {centers.at(i).at(0).get<double>(), centers.at(i).at(1).get<double>()};
  }
  m.score = j.at("score").get<double>();
  m.verified = j.at("verified").get<bool>();
  const json& ne = j.at("normalized_error");
  m.normalized_error = ne.is_null() ? std::numeric_limits<double>::infinity() : ne.get<double>();
  return m;
}

}  // namespace

void save_clusters(const std::string& path, const std::vector<ClusterRecord>& records) {
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorKind::kUnwritable, "cannot write clusters " + path);
  for (const ClusterRecord& rec : records) {
    json roles = json::array();
    for (const auto& r : rec.roles) roles.push_back({{"y", r.y}, {"x", r.x}, {"size", r.size}});
    json matches = json::array();
    for (const auto& m : rec.matches) matches.push_back(match_to_json(m));
    json j{{"seed_image", rec.seed_image},
           {"roles", roles},
           {"matches", matches},
           {"verify_count", rec.verify_count}};
    out << j.dump() << "\n";
  }
  if (!out) throw IoError(IoErrorKind::kUnwritable, "short write to " + path);
}

std::vector<ClusterRecord> load_clusters(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::kMissingFile, "cannot open clusters " + path);
  std::vector<ClusterRecord> records;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      ClusterRecord rec;
      rec.seed_image = j.at("seed_image").get<std::string>();
      const json& roles = j.at("roles");
      for (size_t i = 0; i < 4; ++i) {
        rec.roles[i] = ConstellationRole{roles.at(i).at("y").get<int>(),
                                         roles.at(i).at("x").get<int>(),
                                         roles.at(i).at("size").get<int>()};
      }
      for (const json& mj : j.at("matches")) rec.matches.push_back(match_from_json(mj));
      rec.verify_count = j.at("verify_count").get<int>();
      records.push_back(std::move(rec));
    } catch (const json::exception& e) {
      throw IoError(IoErrorKind::kCorruptPayload,
                    path + ":" + std::to_string(lineno) + ": bad cluster record: " + e.what());
    }
  }
  return records;
}

std::vector<SelectedSet> select_clusters(const std::vector<ClusterRecord>& records,
                                         const CorpusManifest& manifest, int n_sets) {
  if (n_sets < 1) throw ConfigError("cluster selection needs n_sets >= 1");
  struct Entry {
    size_t record;
    std::vector<std::string> set10;
  };
  std::vector<Entry> eligible;
  for (size_t i = 0; i < records.size(); ++i) {
    std::vector<std::string> verified;
    for (const ClusterMatch& m : records[i].matches) {
      if (!m.verified) continue;
      if (manifest.find(m.image_id) == nullptr) {
        throw IoError(IoErrorKind::kDataMismatch,
                      "cluster match names image " + m.image_id + " absent from the manifest");
      }
      verified.push_back(m.image_id);
      if (verified.size() == 10) break;
    }
    if (verified.size() == 10) eligible.push_back(Entry{i, std::move(verified)});
  }

  std::unordered_map<std::string, int> counts;
  std::vector<bool> taken(eligible.size(), false);
  std::vector<SelectedSet> selected;
  int target = 1;
  size_t taken_count = 0;
  while (static_cast<int>(selected.size()) < n_sets && taken_count < eligible.size()) {
    int pick = -1;
    for (size_t i = 0; i < eligible.size(); ++i) {
      if (taken[i]) continue;
      for (const std::string& img : eligible[i].set10) {
        auto it = counts.find(img);
        if (it == counts.end() || it->second < target) {
          pick = static_cast<int>(i);
          break;
        }
      }
      if (pick >= 0) break;
    }
    if (pick < 0) {
      ++target;  // everything already covered this deep; demand one more pass
      continue;
    }
    const Entry& e = eligible[static_cast<size_t>(pick)];
    SelectedSet s;
    s.order = static_cast<int>(selected.size());
    s.seed_image = records[e.record].seed_image;
    s.verify_count = records[e.record].verify_count;
    s.images = e.set10;
    for (const std::string& img : s.images) ++counts[img];
    selected.push_back(std::move(s));
    taken[static_cast<size_t>(pick)] = true;
    ++taken_count;
  }
  return selected;
}

void save_selection(const std::string& path, const std::vector<SelectedSet>& sets) {
  std::ofstream out(path);
  if (!out) throw IoError(IoErrorKind::kUnwritable, "cannot write selection " + path);
  for (const SelectedSet& s : sets) {
    json j{{"order", s.order},
           {"seed_image", s.seed_image},
           {"verify_count", s.verify_count},
           {"images", s.images}};
    out << j.dump() << "\n";
  }
  if (!out) throw IoError(IoErrorKind::kUnwritable, "short write to " + path);
}

std::vector<SelectedSet> load_selection(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError(IoErrorKind::kMissingFile, "cannot open selection " + path);
  std::vector<SelectedSet> sets;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      json j = json::parse(line);
      SelectedSet s;
      s.order = j.at("order").get<int>();
      s.seed_image = j.at("seed_image").get<std::string>();
      s.verify_count = j.at("verify_count").get<int>();
      s.images = j.at("images").get<std::vector<std::string>>();
      sets.push_back(std::move(s));
    } catch (const json::exception& e) {
      throw IoError(IoErrorKind::kCorruptPayload,
                    path + ":" + std::to_string(lineno) + ": bad selection record: " + e.what());
    }
  }
  return sets;
}

}  // namespace patchwork
