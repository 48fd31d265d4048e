#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "textspot/eval.hpp"
#include "textspot/glyphs.hpp"
#include "textspot/model.hpp"

namespace textspot::harness {

struct InferenceConfig {
  double threshold = 0.4;  // kept when mean instance probability >= threshold
  bool line_mode = false;  // emit center polylines instead of polygons
};

/// Final-layer predictions into spotted instances: confidence is the mean of
/// the N per-point probabilities, transcripts come from greedy CTC collapse,
/// polygons from the boundary points (flagged when self-intersecting).
/// No non-maximum suppression.
template <typename T>
SpotResult decode_predictions(const diff::Tape<T>& tape,
                              const net::DecoderLayerOutput<T>& final_layer,
                              int n_queries, int n_points,
                              const data::GlyphSet& glyphs,
                              const InferenceConfig& cfg);

/// One path (and text label) per instance; viewBox matches the image size.
void write_overlay_svg(const std::string& path, const SpotResult& result,
                       int width, int height);

nlohmann::json spot_result_to_json(const SpotResult& result);

}  // namespace textspot::harness
