#pragma once

#include <algorithm>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

#include "vdi/error.hpp"

namespace vdi {

/// Time interval in seconds.
struct Interval {
  double start = 0.0;
  double end = 0.0;

  double length() const { return end - start; }
  bool operator==(const Interval&) const = default;
};

/// |a ∩ b| / |a ∪ b|; 0 when the union is empty.
inline double temporal_iou(const Interval& a, const Interval& b) {
  if (a.end < a.start || b.end < b.start) throw InvalidBoundary("temporal_iou: end before start");
  const double inter = std::min(a.end, b.end) - std::max(a.start, b.start);
  if (inter <= 0.0) return 0.0;
  const double uni = std::max(a.end, b.end) - std::min(a.start, b.start);
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

struct Segment {
  double start_s = 0.0;
  double end_s = 0.0;
  double score = 0.0;

  Interval interval() const { return {start_s, end_s}; }
  bool operator==(const Segment&) const = default;
};

/// Ranked candidate segments for one query, best first.
struct MomentPrediction {
  std::string video_id;
  std::size_t query_id = 0;
  std::vector<Segment> segments;

  bool operator==(const MomentPrediction&) const = default;
};

struct GroundTruth {
  std::size_t query_id = 0;
  Interval interval;
};

struct RecallKey {
  int n = 1;
  double mu = 0.5;

  auto operator<=>(const RecallKey&) const = default;
};

inline std::string recall_name(const RecallKey& k) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "R@%d,IoU=%g", k.n, k.mu);
  return buf;
}

struct EvalReport {
  std::map<RecallKey, double> recall;  // percentages
  double miou = 0.0;                   // percentage
  std::size_t num_queries = 0;

  double recall_at(int n, double mu) const {
    auto it = recall.find({n, mu});
    if (it == recall.end()) throw Error("report has no " + recall_name({n, mu}));
    return it->second;
  }

  bool operator==(const EvalReport&) const = default;
};

/// R@n,mu = 100 * |{q : max IoU over the top-n predictions > mu}| / |Q|.
/// mIoU = 100 * mean top-1 IoU. The comparison with mu is strict.
inline EvalReport evaluate(const std::vector<MomentPrediction>& predictions,
                           const std::vector<GroundTruth>& truths,
                           const std::vector<int>& ns = {1, 5},
                           const std::vector<double>& mus = {0.5, 0.7}) {
  std::unordered_map<std::size_t, const MomentPrediction*> by_query;
  for (const auto& p : predictions) by_query[p.query_id] = &p;

  EvalReport report;
  report.num_queries = truths.size();
  std::map<RecallKey, std::size_t> hits;
  for (int n : ns) {
    for (double mu : mus) hits[{n, mu}] = 0;
  }
  double iou_sum = 0.0;
  for (const auto& gt : truths) {
    auto it = by_query.find(gt.query_id);
    if (it == by_query.end() || it->second->segments.empty()) {
      throw MissingPrediction("no prediction for query " + std::to_string(gt.query_id));
    }
    const auto& segs = it->second->segments;
    // best[k] = max IoU among the first k+1 predictions
    std::vector<double> best(segs.size());
    double running = 0.0;
    for (std::size_t k = 0; k < segs.size(); ++k) {
      running = std::max(running, temporal_iou(segs[k].interval(), gt.interval));
      best[k] = running;
    }
    iou_sum += best.front();
    for (auto& [key, count] : hits) {
      const std::size_t top = std::min<std::size_t>(static_cast<std::size_t>(key.n), segs.size());
      if (top > 0 && best[top - 1] > key.mu) ++count;
    }
  }
  const double q = static_cast<double>(truths.size());
  for (const auto& [key, count] : hits) {
    report.recall[key] = truths.empty() ? 0.0 : 100.0 * static_cast<double>(count) / q;
  }
  report.miou = truths.empty() ? 0.0 : 100.0 * iou_sum / q;
  return report;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  for (const auto& [key, value] : r.recall) j[recall_name(key)] = value;
  j["mIoU"] = r.miou;
  j["num_queries"] = r.num_queries;
  return j;
}

/// Plain-text table: one header row of metric names, one row of values.
inline std::string format_table(const EvalReport& r, const std::string& label = "model") {
  std::ostringstream head, row;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%-12s", "Method");
  head << buf;
  std::snprintf(buf, sizeof buf, "%-12s", label.c_str());
  row << buf;
  for (const auto& [key, value] : r.recall) {
    std::snprintf(buf, sizeof buf, " | %-13s", recall_name(key).c_str());
    head << buf;
    std::snprintf(buf, sizeof buf, " | %13.2f", value);
    row << buf;
  }
  std::snprintf(buf, sizeof buf, " | %6s", "mIoU");
  head << buf;
  std::snprintf(buf, sizeof buf, " | %6.2f", r.miou);
  row << buf;
  return head.str() + "\n" + row.str() + "\n";
}

// ---------------------------------------------------------------------------
// Prediction JSON lines: {video_id, query_id, segments: [[start, end, score], ...]}

inline nlohmann::json to_json(const MomentPrediction& p) {
  nlohmann::json segs = nlohmann::json::array();
  for (const auto& s : p.segments) segs.push_back({s.start_s, s.end_s, s.score});
  return {{"video_id", p.video_id}, {"query_id", p.query_id}, {"segments", segs}};
}

inline void write_predictions(std::ostream& out, const std::vector<MomentPrediction>& preds) {
  for (const auto& p : preds) out << to_json(p).dump() << '\n';
}

inline std::vector<MomentPrediction> read_predictions(std::istream& in) {
  std::vector<MomentPrediction> preds;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      MomentPrediction p;
      p.video_id = j.at("video_id").get<std::string>();
      p.query_id = j.at("query_id").get<std::size_t>();
      for (const auto& s : j.at("segments")) {
        if (!s.is_array() || s.size() != 3) throw ParseError(line_no, "segment must be [start, end, score]");
        p.segments.push_back({s[0].get<double>(), s[1].get<double>(), s[2].get<double>()});
      }
      preds.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return preds;
}

}  // namespace vdi
