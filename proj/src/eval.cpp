#include "motarfuse/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "motarfuse/error.hpp"

namespace motarfuse {

namespace {

std::vector<ImageFrame> model_frames(const Sample& s, std::size_t max_frames) {
  if (s.frames.size() <= max_frames) return s.frames;
  std::vector<ImageFrame> out;
  const std::size_t n = s.frames.size();
  for (std::size_t i = 0; i < max_frames; ++i) out.push_back(s.frames[i * n / max_frames]);
  return out;
}

}  // namespace

std::vector<FeatureRecord> extract_features(const Network& net, const std::vector<Sample>& samples,
                                            std::size_t batch) {
  if (batch == 0) batch = 1;
  std::vector<FeatureRecord> out;
  out.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    Tape tape(false);
    Binder b(tape, net.params(), false);
    const std::size_t end = std::min(samples.size(), start + batch);
    for (std::size_t i = start; i < end; ++i) {
      const Sample& s = samples[i];
      if (s.frames.empty()) throw ContractError("extract_features: sample without frames");
      const ForwardResult r = net.forward(b, model_frames(s, net.config().max_frames), false);
      const auto d = r.fused.h_m_cls.value().data();
      out.push_back(FeatureRecord{{d.begin(), d.end()}, s.identity_id, s.camera_id});
    }
  }
  return out;
}

std::vector<double> l2_normalized(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  const double n = std::sqrt(s);
  std::vector<double> out(v);
  if (n > 0.0)
    for (double& x : out) x /= n;
  return out;
}

namespace {

std::vector<RankedEntry> ranked(const std::vector<double>& q, const FeatureRecord& query,
                                const std::vector<std::vector<double>>& gallery_norm,
                                const std::vector<FeatureRecord>& gallery) {
  std::vector<RankedEntry> list;
  list.reserve(gallery.size());
  for (std::size_t j = 0; j < gallery.size(); ++j) {
    if (gallery[j].identity_id == query.identity_id && gallery[j].camera_id == query.camera_id) continue;
    const auto& g = gallery_norm[j];
    if (g.size() != q.size()) {
      throw ShapeError("feature length " + std::to_string(g.size()) + " in gallery vs " + std::to_string(q.size()) +
                       " in query");
    }
    double s = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) {
      const double d = q[c] - g[c];
      s += d * d;
    }
    list.push_back(RankedEntry{j, std::sqrt(s)});
  }
  std::stable_sort(list.begin(), list.end(),
                   [](const RankedEntry& a, const RankedEntry& b) { return a.distance < b.distance; });
  return list;
}

std::vector<std::vector<double>> normalize_all(const std::vector<FeatureRecord>& records) {
  std::vector<std::vector<double>> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(l2_normalized(r.feature));
  return out;
}

}  // namespace

std::vector<RankedEntry> rank_list(const FeatureRecord& query, const std::vector<FeatureRecord>& gallery,
                                   std::size_t k) {
  auto list = ranked(l2_normalized(query.feature), query, normalize_all(gallery), gallery);
  if (list.size() > k) list.resize(k);
  return list;
}

RankingResult cmc_map(const std::vector<FeatureRecord>& query, const std::vector<FeatureRecord>& gallery,
                      std::size_t max_rank) {
  if (gallery.empty()) throw EvaluationError("cmc_map: empty gallery");
  if (max_rank == 0) throw EvaluationError("cmc_map: max_rank must be positive");
  const auto gnorm = normalize_all(gallery);
  RankingResult r;
  r.cmc.assign(max_rank, 0.0);
  for (const auto& q : query) {
    const auto list = ranked(l2_normalized(q.feature), q, gnorm, gallery);
    std::size_t hits = 0;
    double ap = 0.0;
    std::size_t first = list.size();
    for (std::size_t pos = 0; pos < list.size(); ++pos) {
      if (gallery[list[pos].index].identity_id != q.identity_id) continue;
      if (hits == 0) first = pos;
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(pos + 1);
    }
    if (hits == 0) {
      ++r.skipped;
      continue;
    }
    ++r.evaluated;
    r.per_query_ap.push_back(ap / static_cast<double>(hits));
    for (std::size_t k = first; k < max_rank; ++k) r.cmc[k] += 1.0;
  }
  if (r.evaluated == 0) {
    throw EvaluationError("cmc_map: all " + std::to_string(query.size()) + " queries lack a valid gallery match");
  }
  const double n = static_cast<double>(r.evaluated);
  for (double& c : r.cmc) c /= n;
  double s = 0.0;
  for (double ap : r.per_query_ap) s += ap;
  r.map = s / n;
  return r;
}

void write_ranking_csv(const std::filesystem::path& path, const RankingResult& r) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "rank,cmc\n";
  char buf[64];
  for (std::size_t k = 0; k < r.cmc.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g\n", k + 1, r.cmc[k]);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "map,%.17g\n", r.map);
  out << buf;
}

std::string format_ranking_table(const RankingResult& r) {
  std::ostringstream os;
  char buf[96];
  std::snprintf(buf, sizeof buf, "queries evaluated %zu, skipped %zu\n", r.evaluated, r.skipped);
  os << buf;
  os << "rank    cmc\n";
  for (std::size_t k = 0; k < r.cmc.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%4zu  %.4f\n", k + 1, r.cmc[k]);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "mAP=%.4f\n", r.map);
  os << buf;
  return os.str();
}

RankingResult evaluate_folder(const Network& net, const std::filesystem::path& root, SampleMode mode,
                              std::size_t max_rank) {
  const auto query = load_folder(root / "query", mode);
  const auto gallery = load_folder(root / "gallery", mode);
  if (query.empty()) throw EvaluationError("no query samples under " + (root / "query").string());
  if (gallery.empty()) throw EvaluationError("no gallery samples under " + (root / "gallery").string());
  return cmc_map(extract_features(net, query), extract_features(net, gallery), max_rank);
}

}  // namespace motarfuse
