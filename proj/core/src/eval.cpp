#include "textspot/eval.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <stdexcept>

#include "textspot/polygon.hpp"

namespace textspot::harness {

std::string casefold(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

int levenshtein(const std::string& a, const std::string& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int> prev(m + 1), cur(m + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int sub = prev[j - 1] + (a[i - 1] != b[j - 1] ? 1 : 0);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

geom::Point2 polyline_midpoint(std::span<const geom::Point2> pts) {
  if (pts.empty()) return {0, 0};
  const size_t n = pts.size();
  if (n % 2 == 1) return pts[n / 2];
  return geom::midpoint(pts[n / 2 - 1], pts[n / 2]);
}

namespace {

struct F1 {
  int tp = 0, fp = 0, fn = 0;
  double precision() const { return tp + fp > 0 ? double(tp) / (tp + fp) : 0.0; }
  double recall() const { return tp + fn > 0 ? double(tp) / (tp + fn) : 0.0; }
  double f1() const {
    const double p = precision(), r = recall();
    return p + r > 0 ? 2 * p * r / (p + r) : 0.0;
  }
};

std::vector<int> confidence_order(const SpotResult& pred) {
  std::vector<int> order(pred.instances.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return pred.instances[a].confidence > pred.instances[b].confidence;
  });
  return order;
}

// Per-image greedy IoU matching; returns for each prediction (in input
// order) the matched gt index or -1.
std::vector<int> match_by_iou(const SpotResult& pred,
                              const std::vector<geom::TextInstanceGT>& gt,
                              double iou_threshold) {
  std::vector<int> matched_gt(gt.size(), 0);
  std::vector<int> assign(pred.instances.size(), -1);
  std::vector<std::vector<geom::Point2>> gt_polys(gt.size());
  for (size_t g = 0; g < gt.size(); ++g) {
    if (gt[g].has_boundary()) {
      gt_polys[g] = geom::polygon_from_boundary(gt[g].top, gt[g].bot);
    }
  }
  for (int pi : confidence_order(pred)) {
    const SpotInstance& inst = pred.instances[pi];
    if (!inst.valid_polygon || inst.polygon.size() < 3) continue;
    double best = iou_threshold;
    int best_g = -1;
    for (size_t g = 0; g < gt.size(); ++g) {
      if (matched_gt[g] || gt_polys[g].empty()) continue;
      const double iou = geom::polygon_iou(inst.polygon, gt_polys[g]);
      if (iou >= best) {
        best = iou;
        best_g = static_cast<int>(g);
      }
    }
    if (best_g >= 0) {
      matched_gt[best_g] = 1;
      assign[pi] = best_g;
    }
  }
  return assign;
}

std::string lexicon_correct(const std::string& word,
                            const std::vector<std::string>& lexicon) {
  std::string best;
  int best_d = std::numeric_limits<int>::max();
  const std::string w = casefold(word);
  for (const std::string& cand : lexicon) {
    const std::string c = casefold(cand);
    const int d = levenshtein(w, c);
    if (d < best_d || (d == best_d && c < best)) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

}  // namespace

DetectionMetrics eval_detection(std::span<const SpotResult> preds,
                                std::span<const std::vector<geom::TextInstanceGT>> gts,
                                double iou_threshold) {
  if (preds.size() != gts.size()) {
    throw std::invalid_argument("eval_detection: image count mismatch");
  }
  F1 acc;
  for (size_t i = 0; i < preds.size(); ++i) {
    const auto assign = match_by_iou(preds[i], gts[i], iou_threshold);
    int tp = 0;
    for (int a : assign) tp += a >= 0 ? 1 : 0;
    acc.tp += tp;
    acc.fp += static_cast<int>(assign.size()) - tp;
    acc.fn += static_cast<int>(gts[i].size()) - tp;
  }
  DetectionMetrics m;
  m.tp = acc.tp;
  m.fp = acc.fp;
  m.fn = acc.fn;
  m.precision = acc.precision();
  m.recall = acc.recall();
  m.f1 = acc.f1();
  return m;
}

E2eMetrics eval_e2e(std::span<const SpotResult> preds,
                    std::span<const std::vector<geom::TextInstanceGT>> gts,
                    double iou_threshold,
                    const std::vector<std::string>* lexicon) {
  if (preds.size() != gts.size()) {
    throw std::invalid_argument("eval_e2e: image count mismatch");
  }
  if (lexicon && lexicon->empty()) {
    throw std::invalid_argument("eval_e2e: empty lexicon in Full mode");
  }
  E2eMetrics out;
  out.detection = eval_detection(preds, gts, iou_threshold);
  F1 none, full;
  for (size_t i = 0; i < preds.size(); ++i) {
    const auto assign = match_by_iou(preds[i], gts[i], iou_threshold);
    int tp_none = 0, tp_full = 0;
    for (size_t pi = 0; pi < assign.size(); ++pi) {
      if (assign[pi] < 0) continue;
      const std::string pred_t = casefold(preds[i].instances[pi].transcript);
      const std::string gt_t = casefold(gts[i][assign[pi]].transcript);
      if (pred_t == gt_t) ++tp_none;
      if (lexicon && lexicon_correct(pred_t, *lexicon) == gt_t) ++tp_full;
    }
    const int np = static_cast<int>(preds[i].instances.size());
    const int ng = static_cast<int>(gts[i].size());
    none.tp += tp_none;
    none.fp += np - tp_none;
    none.fn += ng - tp_none;
    full.tp += tp_full;
    full.fp += np - tp_full;
    full.fn += ng - tp_full;
  }
  out.none = none.f1();
  if (lexicon) out.full = full.f1();
  return out;
}

double eval_line_protocol(std::span<const SpotResult> preds,
                          std::span<const std::vector<geom::TextInstanceGT>> gts) {
  if (preds.size() != gts.size()) {
    throw std::invalid_argument("eval_line_protocol: image count mismatch");
  }
  F1 acc;
  for (size_t i = 0; i < preds.size(); ++i) {
    std::vector<std::vector<geom::Point2>> gt_polys(gts[i].size());
    for (size_t g = 0; g < gts[i].size(); ++g) {
      if (!gts[i][g].has_boundary()) {
        throw std::invalid_argument("eval_line_protocol: ground truth lacks polygons");
      }
      gt_polys[g] = geom::polygon_from_boundary(gts[i][g].top, gts[i][g].bot);
    }
    std::vector<int> taken(gts[i].size(), 0);
    int tp = 0;
    for (int pi : confidence_order(preds[i])) {
      const SpotInstance& inst = preds[i].instances[pi];
      const geom::Point2 mid = polyline_midpoint(inst.polyline);
      int hit = -1;
      for (size_t g = 0; g < gt_polys.size(); ++g) {
        if (taken[g]) continue;
        if (geom::point_in_polygon(mid, gt_polys[g])) {
          hit = static_cast<int>(g);
          break;
        }
      }
      if (hit < 0) continue;
      taken[hit] = 1;
      if (casefold(inst.transcript) == casefold(gts[i][hit].transcript)) ++tp;
    }
    acc.tp += tp;
    acc.fp += static_cast<int>(preds[i].instances.size()) - tp;
    acc.fn += static_cast<int>(gts[i].size()) - tp;
  }
  return acc.f1();
}

}  // namespace textspot::harness
