#pragma once

#include <span>
#include <vector>

#include "textspot/autograd.hpp"
#include "textspot/geometry.hpp"

namespace textspot::match {

struct LossConfig {
  double lambda_cls = 1.0;
  double lambda_coord = 1.0;
  double lambda_bd = 0.5;
  double lambda_text = 0.5;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  /// Finite stand-in for infeasible CTC entries in the cost matrix.
  double ctc_infeasible_penalty = 1e4;
};

/// Matching cost derived from the focal loss: the positive term minus the
/// negative term, FL'(x) = -a(1-x)^g log(x) + (1-a) x^g log(1-x).
/// Decreasing in x; input clamped to [1e-8, 1-1e-8].
double focal_cost(double prob, double alpha = 0.25, double gamma = 2.0);

/// Sum of per-point L1 distances, sum_n (|dx_n| + |dy_n|).
double coord_cost(std::span<const geom::Point2> gt,
                  std::span<const geom::Point2> pred);

struct CostMatrix {
  int rows = 0;  // ground truths
  int cols = 0;  // queries
  std::vector<double> data;

  CostMatrix() = default;
  CostMatrix(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, 0.0) {}
  double& at(int g, int k) { return data[static_cast<size_t>(g) * cols + k]; }
  double at(int g, int k) const { return data[static_cast<size_t>(g) * cols + k]; }
};

struct MatchResult {
  std::vector<int> assignment;  // assignment[g] = matched query index
  double total_cost = 0.0;

  bool matched_query(int k) const {
    for (int a : assignment)
      if (a == k) return true;
    return false;
  }
};

/// Exact minimum-cost injective assignment of rows to columns (rows <= cols).
/// Ties between optimal assignments break toward the lexicographically
/// smallest assignment vector.
MatchResult hungarian(const CostMatrix& cost);

/// Ground truth in matching form: transcript encoded as class ids 1..V.
struct GtInstance {
  std::vector<int> label;
  std::vector<geom::Point2> center;
  std::vector<geom::Point2> top, bot;  // empty in line mode
};

/// Detached per-query view of the decoder predictions.
struct QueryPrediction {
  double prob = 0.0;                    // mean of the N per-point probabilities
  std::vector<double> log_probs;        // [N, V+1] row-major, log-normalized
  std::vector<geom::Point2> center;     // N points
};

/// Eq.-style complete cost: lambda_cls FL' + lambda_text CTC + lambda_coord L1.
/// Infeasible CTC entries receive cfg.ctc_infeasible_penalty. No boundary term.
CostMatrix build_cost_matrix(std::span<const GtInstance> gts,
                             std::span<const QueryPrediction> preds,
                             const LossConfig& cfg);

// ----------------------------------------------------------------- tape side

/// Decoder-layer prediction vars, flattened row-major over (k, n).
template <typename T>
struct DecoderLayerVars {
  diff::Var<T> inst_logits;  // [K*N]
  diff::Var<T> char_logits;  // [K*N, V+1]
  diff::Var<T> center;       // [K*N, 2]
  diff::Var<T> top;          // [K*N, 2]; invalid handle when boundaries off
  diff::Var<T> bot;
};

struct LossParts {
  double cls = 0.0, text = 0.0, coord = 0.0, bd = 0.0;
};

template <typename T>
struct LayerLoss {
  diff::Var<T> loss;  // lambda-weighted sum for this layer
  MatchResult match;
  LossParts parts;  // unweighted component values
};

/// Matches the layer's detached predictions against the ground truth and
/// assembles the layer loss: focal over all K*N point logits, CTC / center /
/// boundary terms over matched queries only.
template <typename T>
LayerLoss<T> decoder_layer_loss(diff::Tape<T>& tape, const DecoderLayerVars<T>& vars,
                                std::span<const GtInstance> gts,
                                const LossConfig& cfg, int n_queries,
                                int n_points, bool use_boundary);

/// Encoder auxiliary loss over every proposal pixel: focal classification
/// plus L1 over the n_points uniformly sampled points of matched proposals.
/// scores [P], ctrl [P,8] (x0,y0,...,x3,y3 in normalized coordinates).
template <typename T>
LayerLoss<T> encoder_loss(diff::Tape<T>& tape, diff::Var<T> scores,
                          diff::Var<T> ctrl, std::span<const GtInstance> gts,
                          const LossConfig& cfg, int n_points);

}  // namespace textspot::match
