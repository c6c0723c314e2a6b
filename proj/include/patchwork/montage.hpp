#pragma once

#include <string>
#include <vector>

#include "patchwork/corpus.hpp"
#include "patchwork/embed.hpp"
#include "patchwork/mining.hpp"

namespace patchwork {

// Lays tiles out left to right, top to bottom on a light background.
ImageBuffer make_tile_grid(const std::vector<ImageBuffer>& tiles, int cols, int pad = 2,
                           float background = 0.9f);

// Query patch followed by its nearest neighbors, one row per figure.
void montage_knn(const EmbeddingTable& table, const CorpusManifest& manifest,
                 const PatchRef& query, int k, const std::string& out_png);

// The four seed roles, then each match's four best-center crops row by row.
void montage_cluster(const ClusterRecord& record, const CorpusManifest& manifest,
                     int max_matches, const std::string& out_png);

}  // namespace patchwork
