#pragma once

#include <algorithm>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "posecl/error.hpp"

namespace posecl {

/// Maximal constant-label run [begin, end).
struct LabelRun {
  int label = 0;
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - begin; }
};

inline std::vector<LabelRun> label_runs(std::span<const int> labels, const std::set<int>& background = {}) {
  std::vector<LabelRun> runs;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    if (!runs.empty() && runs.back().label == labels[t] && runs.back().end == t)
      ++runs.back().end;
    else
      runs.push_back({labels[t], t, t + 1});
  }
  std::erase_if(runs, [&](const LabelRun& r) { return background.contains(r.label); });
  return runs;
}

/// Run-length collapse with background runs dropped.
inline std::vector<int> collapse_transcript(std::span<const int> labels, const std::set<int>& background = {}) {
  std::vector<int> out;
  for (const auto& r : label_runs(labels, background))
    if (out.empty() || out.back() != r.label) out.push_back(r.label);
  return out;
}

inline void check_lengths(std::span<const int> pred, std::span<const int> gt) {
  require(pred.size() == gt.size(), Errc::LengthMismatch,
          "prediction has " + std::to_string(pred.size()) + " frames, ground truth " + std::to_string(gt.size()));
}

inline double frame_accuracy(std::span<const int> pred, std::span<const int> gt) {
  check_lengths(pred, gt);
  require(!gt.empty(), Errc::LengthMismatch, "frame_accuracy on empty sequence");
  std::size_t hits = 0;
  for (std::size_t t = 0; t < gt.size(); ++t) hits += pred[t] == gt[t];
  return static_cast<double>(hits) / static_cast<double>(gt.size());
}

/// One predicted segment paired with at most one ground-truth segment.
struct SegmentMatch {
  LabelRun pred;
  std::optional<LabelRun> gt;
  double iou = 0.0;
};

/// Greedy one-to-one matching of same-class segments. Candidate pairs are
/// taken in descending intersection, then ascending union (higher IoU);
/// remaining ties go to the earlier predicted start, then the earlier
/// ground-truth start.
inline std::vector<SegmentMatch> match_segments(std::span<const int> pred, std::span<const int> gt,
                                                const std::set<int>& background) {
  check_lengths(pred, gt);
  const auto p_runs = label_runs(pred, background);
  const auto g_runs = label_runs(gt, background);
  struct Candidate {
    std::size_t inter, uni, pi, gi;
  };
  std::vector<Candidate> cands;
  for (std::size_t pi = 0; pi < p_runs.size(); ++pi)
    for (std::size_t gi = 0; gi < g_runs.size(); ++gi) {
      if (p_runs[pi].label != g_runs[gi].label) continue;
      const std::size_t lo = std::max(p_runs[pi].begin, g_runs[gi].begin);
      const std::size_t hi = std::min(p_runs[pi].end, g_runs[gi].end);
      if (hi > lo) cands.push_back({hi - lo, p_runs[pi].length() + g_runs[gi].length() - (hi - lo), pi, gi});
    }
  std::sort(cands.begin(), cands.end(), [&](const Candidate& a, const Candidate& b) {
    return std::tuple(b.inter, a.uni, p_runs[a.pi].begin, g_runs[a.gi].begin) <
           std::tuple(a.inter, b.uni, p_runs[b.pi].begin, g_runs[b.gi].begin);
  });

  std::vector<SegmentMatch> out;
  for (const auto& r : p_runs) out.push_back({r, std::nullopt, 0.0});
  std::vector<bool> gt_used(g_runs.size(), false);
  for (const auto& c : cands) {
    if (out[c.pi].gt || gt_used[c.gi]) continue;
    gt_used[c.gi] = true;
    out[c.pi].gt = g_runs[c.gi];
    out[c.pi].iou = static_cast<double>(c.inter) / static_cast<double>(c.uni);
  }
  return out;
}

/// A metric value plus whether its denominator was empty (value is then 0).
struct MetricValue {
  double value = 0.0;
  bool empty_denominator = false;
};

/// Mean IoU over non-background predicted segments; unmatched ones score 0.
inline MetricValue segmental_iou(std::span<const int> pred, std::span<const int> gt,
                                 const std::set<int>& background = {}) {
  const auto matches = match_segments(pred, gt, background);
  if (matches.empty()) return {0.0, true};
  double total = 0.0;
  for (const auto& m : matches) total += m.iou;
  return {total / static_cast<double>(matches.size()), false};
}

/// Normalized Levenshtein similarity on the 0-100 scale.
inline double edit_score(std::span<const int> pred_transcript, std::span<const int> gt_transcript) {
  const std::size_t n = pred_transcript.size();
  const std::size_t m = gt_transcript.size();
  if (n == 0 && m == 0) return 100.0;
  std::vector<std::size_t> prev(m + 1), cur(m + 1);
  std::iota(prev.begin(), prev.end(), std::size_t{0});
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= m; ++j) {
      const std::size_t sub = prev[j - 1] + (pred_transcript[i - 1] == gt_transcript[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return 100.0 * (1.0 - static_cast<double>(prev[m]) / static_cast<double>(std::max(n, m)));
}

struct ClassF1 {
  int label = 0;
  std::size_t tp = 0, fp = 0, fn = 0;
  double f1 = 0.0;
};

struct F1Result {
  MetricValue mean;
  std::vector<ClassF1> per_class;
};

/// Per-class segment F1 at an IoU threshold, averaged over the classes
/// present in the ground truth.
inline F1Result f1_at_threshold(std::span<const int> pred, std::span<const int> gt, double threshold = 0.5,
                                const std::set<int>& background = {}) {
  const auto matches = match_segments(pred, gt, background);
  std::map<int, ClassF1> table;
  for (const auto& r : label_runs(gt, background)) {
    auto& c = table[r.label];
    c.label = r.label;
    ++c.fn;
  }
  std::map<int, std::size_t> pred_fp;
  for (const auto& m : matches) {
    if (m.gt && m.iou >= threshold) {
      auto& c = table[m.pred.label];
      ++c.tp;
      --c.fn;
    } else {
      ++pred_fp[m.pred.label];
    }
  }
  F1Result out;
  if (table.empty()) {
    out.mean = {0.0, true};
    return out;
  }
  double total = 0.0;
  for (auto& [label, c] : table) {
    c.fp = pred_fp[label];
    const std::size_t denom = 2 * c.tp + c.fp + c.fn;
    c.f1 = c.tp == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
    total += c.f1;
    out.per_class.push_back(c);
  }
  out.mean = {total / static_cast<double>(table.size()), false};
  return out;
}

struct MetricReport {
  double acc = 0.0;
  double iou = 0.0;
  double edit = 0.0;
  double f1_at_50 = 0.0;
  bool iou_empty = false;
  bool f1_empty = false;
  std::vector<ClassF1> per_class;
};

inline MetricReport evaluate(std::span<const int> pred, std::span<const int> gt, const std::set<int>& background = {}) {
  check_lengths(pred, gt);
  MetricReport r;
  r.acc = frame_accuracy(pred, gt);
  const auto iou = segmental_iou(pred, gt, background);
  r.iou = iou.value;
  r.iou_empty = iou.empty_denominator;
  const auto pt = collapse_transcript(pred, background);
  const auto gtt = collapse_transcript(gt, background);
  r.edit = edit_score(pt, gtt);
  auto f1 = f1_at_threshold(pred, gt, 0.5, background);
  r.f1_at_50 = f1.mean.value;
  r.f1_empty = f1.mean.empty_denominator;
  r.per_class = std::move(f1.per_class);
  return r;
}

/// Unweighted mean over videos.
inline MetricReport mean_report(std::span<const MetricReport> reports) {
  MetricReport m;
  if (reports.empty()) return m;
  for (const auto& r : reports) {
    m.acc += r.acc;
    m.iou += r.iou;
    m.edit += r.edit;
    m.f1_at_50 += r.f1_at_50;
  }
  const double n = static_cast<double>(reports.size());
  m.acc /= n;
  m.iou /= n;
  m.edit /= n;
  m.f1_at_50 /= n;
  return m;
}

}  // namespace posecl
