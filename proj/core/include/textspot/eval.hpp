#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "textspot/geometry.hpp"

namespace textspot::harness {

/// One spotted instance. `polygon` is empty in line mode; `polyline` always
/// carries the predicted center points.
struct SpotInstance {
  std::vector<geom::Point2> polygon;
  std::vector<geom::Point2> polyline;
  std::string transcript;
  double confidence = 0.0;
  bool valid_polygon = true;  // false when self-intersecting
};

struct SpotResult {
  std::vector<SpotInstance> instances;
};

struct DetectionMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  int tp = 0, fp = 0, fn = 0;
};

/// Greedy one-to-one matching by descending confidence; a prediction claims
/// the unmatched ground truth with the highest polygon IoU >= threshold.
/// Invalid polygons never match and count as false positives.
DetectionMetrics eval_detection(std::span<const SpotResult> preds,
                                std::span<const std::vector<geom::TextInstanceGT>> gts,
                                double iou_threshold = 0.5);

struct E2eMetrics {
  double none = 0.0;
  std::optional<double> full;
  DetectionMetrics detection;
};

/// End-to-end F1. "None" counts a detection-matched pair as correct only on
/// a case-folded exact transcript match; "Full" first snaps the prediction to
/// the nearest lexicon word by edit distance (ties break lexicographically).
E2eMetrics eval_e2e(std::span<const SpotResult> preds,
                    std::span<const std::vector<geom::TextInstanceGT>> gts,
                    double iou_threshold = 0.5,
                    const std::vector<std::string>* lexicon = nullptr);

/// Line protocol: a prediction matches an unmatched ground truth when the
/// midpoint of its center polyline falls inside the ground-truth polygon;
/// transcripts compare as in "None". Returns the F1.
double eval_line_protocol(std::span<const SpotResult> preds,
                          std::span<const std::vector<geom::TextInstanceGT>> gts);

int levenshtein(const std::string& a, const std::string& b);
std::string casefold(std::string s);

/// Midpoint of a polyline: middle sample for odd counts, mean of the two
/// middle samples for even counts.
geom::Point2 polyline_midpoint(std::span<const geom::Point2> pts);

}  // namespace textspot::harness
