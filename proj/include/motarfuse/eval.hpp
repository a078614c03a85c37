#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "motarfuse/data.hpp"
#include "motarfuse/network.hpp"

namespace motarfuse {

struct FeatureRecord {
  std::vector<double> feature;  // h_m_cls
  int identity_id = 0;
  int camera_id = 0;
};

struct RankingResult {
  std::vector<double> cmc;  // cmc[k-1] = fraction of evaluated queries matched within rank k
  double map = 0.0;
  std::vector<double> per_query_ap;  // evaluated queries only, in query order
  std::size_t evaluated = 0;
  std::size_t skipped = 0;  // queries without a valid positive
};

// One record per sample. Samples longer than max_frames are subsampled evenly.
// Up to `batch` samples share one inference tape; the result does not depend
// on it.
std::vector<FeatureRecord> extract_features(const Network& net, const std::vector<Sample>& samples,
                                            std::size_t batch = 1);

std::vector<double> l2_normalized(const std::vector<double>& v);

struct RankedEntry {
  std::size_t index;  // into the gallery
  double distance;
};

// Gallery entries sorted by Euclidean distance between normalized features,
// ties in gallery order, with same-identity same-camera entries removed.
// Truncated to k entries.
std::vector<RankedEntry> rank_list(const FeatureRecord& query, const std::vector<FeatureRecord>& gallery,
                                   std::size_t k);

RankingResult cmc_map(const std::vector<FeatureRecord>& query, const std::vector<FeatureRecord>& gallery,
                      std::size_t max_rank);

void write_ranking_csv(const std::filesystem::path& path, const RankingResult& r);
std::string format_ranking_table(const RankingResult& r);

// Loads `<root>/query` and `<root>/gallery` in the given mode and evaluates.
RankingResult evaluate_folder(const Network& net, const std::filesystem::path& root, SampleMode mode,
                              std::size_t max_rank);

}  // namespace motarfuse
