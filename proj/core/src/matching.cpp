#include "textspot/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "textspot/ctc.hpp"

namespace textspot::match {

double focal_cost(double prob, double alpha, double gamma) {
  const double p = std::min(std::max(prob, 1e-8), 1.0 - 1e-8);
  return -alpha * std::pow(1.0 - p, gamma) * std::log(p) +
         (1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
}

double coord_cost(std::span<const geom::Point2> gt,
                  std::span<const geom::Point2> pred) {
  if (gt.size() != pred.size()) {
    throw std::invalid_argument("coord_cost: point counts differ (" +
                                std::to_string(gt.size()) + " vs " +
                                std::to_string(pred.size()) + ")");
  }
  double s = 0.0;
  for (size_t i = 0; i < gt.size(); ++i) {
    s += std::abs(gt[i].x - pred[i].x) + std::abs(gt[i].y - pred[i].y);
  }
  return s;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Jonker-Volgenant style shortest augmenting path on the rectangular matrix
// (rows <= cols). Returns the optimal total; fills assignment if non-null.
// `row_of` maps local row -> original row for cost lookups restricted to a
// subset, and `col_allowed` masks out columns already fixed.
double solve_lap(const CostMatrix& a, const std::vector<int>& row_of,
                 const std::vector<char>& col_allowed,
                 std::vector<int>* assignment) {
  const int n = static_cast<int>(row_of.size());
  const int m = a.cols;
  if (n == 0) return 0.0;
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, kInf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = -1;
      for (int j = 1; j <= m; ++j) {
        if (used[j] || !col_allowed[j - 1]) continue;
        const double cur = a.at(row_of[i0 - 1], j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      if (j1 < 0) throw std::runtime_error("hungarian: no augmenting column");
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else if (minv[j] != kInf) {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double total = 0.0;
  if (assignment) assignment->assign(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    total += a.at(row_of[p[j] - 1], j - 1);
    if (assignment) (*assignment)[p[j] - 1] = j - 1;
  }
  return total;
}

}  // namespace

MatchResult hungarian(const CostMatrix& cost) {
  if (cost.rows > cost.cols) {
    throw std::invalid_argument("hungarian: more ground truths (" +
                                std::to_string(cost.rows) + ") than queries (" +
                                std::to_string(cost.cols) + ")");
  }
  MatchResult res;
  if (cost.rows == 0) return res;
  for (double c : cost.data) {
    if (!std::isfinite(c)) {
      throw std::invalid_argument("hungarian: non-finite cost entry");
    }
  }
  std::vector<int> rows(cost.rows);
  for (int i = 0; i < cost.rows; ++i) rows[i] = i;
  std::vector<char> cols(cost.cols, 1);
  const double optimal = solve_lap(cost, rows, cols, nullptr);
  const double tol = 1e-9 * (1.0 + std::abs(optimal));

  // Fix rows one by one to the smallest column that still completes to an
  // optimal assignment; this yields the lexicographically smallest optimum.
  res.assignment.assign(cost.rows, -1);
  double fixed_cost = 0.0;
  std::vector<int> remaining(rows.begin() + 1, rows.end());
  for (int g = 0; g < cost.rows; ++g) {
    bool chosen = false;
    for (int k = 0; k < cost.cols && !chosen; ++k) {
      if (!cols[k]) continue;
      cols[k] = 0;
      const double sub = remaining.empty() ? 0.0 : solve_lap(cost, remaining, cols, nullptr);
      if (fixed_cost + cost.at(g, k) + sub <= optimal + tol) {
        res.assignment[g] = k;
        fixed_cost += cost.at(g, k);
        chosen = true;
      } else {
        cols[k] = 1;
      }
    }
    if (!chosen) throw std::runtime_error("hungarian: failed to fix row");
    if (!remaining.empty()) remaining.erase(remaining.begin());
  }
  res.total_cost = 0.0;
  for (int g = 0; g < cost.rows; ++g) res.total_cost += cost.at(g, res.assignment[g]);
  return res;
}

CostMatrix build_cost_matrix(std::span<const GtInstance> gts,
                             std::span<const QueryPrediction> preds,
                             const LossConfig& cfg) {
  const int G = static_cast<int>(gts.size());
  const int K = static_cast<int>(preds.size());
  if (G > K) {
    throw std::invalid_argument("build_cost_matrix: " + std::to_string(G) +
                                " ground truths exceed " + std::to_string(K) +
                                " queries");
  }
  CostMatrix cm(G, K);
  for (int g = 0; g < G; ++g) {
    const GtInstance& gt = gts[g];
    for (int k = 0; k < K; ++k) {
      const QueryPrediction& q = preds[k];
      double c = cfg.lambda_cls * focal_cost(q.prob, cfg.focal_alpha, cfg.focal_gamma);
      if (cfg.lambda_text != 0.0) {
        const int N = static_cast<int>(q.center.size());
        const int V1 = static_cast<int>(q.log_probs.size()) / std::max(N, 1);
        if (ctc_feasible(gt.label, N)) {
          c += cfg.lambda_text * ctc_nll(q.log_probs.data(), N, V1, gt.label);
        } else {
          c += cfg.lambda_text * cfg.ctc_infeasible_penalty;
        }
      }
      c += cfg.lambda_coord * coord_cost(gt.center, q.center);
      cm.at(g, k) = c;
    }
  }
  return cm;
}

// --------------------------------------------------------------- loss assembly

namespace {

// sum( pos_mask * -a (1-p)^g log p + neg_mask * -(1-a) p^g log(1-p) )
template <typename T>
diff::Var<T> focal_loss_sum(diff::Tape<T>& tape, diff::Var<T> logits,
                            const std::vector<T>& pos_mask, const LossConfig& cfg) {
  const T alpha = static_cast<T>(cfg.focal_alpha);
  const T gamma = static_cast<T>(cfg.focal_gamma);
  std::vector<T> neg_mask(pos_mask.size());
  for (size_t i = 0; i < pos_mask.size(); ++i) neg_mask[i] = T(1) - pos_mask[i];
  diff::Var<T> p = tape.clamp(tape.sigmoid(logits), T(1e-8), T(1) - T(1e-8));
  diff::Var<T> q = tape.add_const(tape.scale(p, T(-1)), T(1));  // 1 - p
  diff::Var<T> pos = tape.mul(tape.pow_const(q, gamma), tape.log(p));
  diff::Var<T> neg = tape.mul(tape.pow_const(p, gamma), tape.log(q));
  diff::Shape ms = tape.shape(logits);
  diff::Var<T> posm = tape.constant(ms, pos_mask);
  diff::Var<T> negm = tape.constant(std::move(ms), std::move(neg_mask));
  diff::Var<T> total = tape.add(tape.scale(tape.mul(posm, pos), -alpha),
                                tape.scale(tape.mul(negm, neg), -(T(1) - alpha)));
  return tape.sum_all(total);
}

template <typename T>
std::vector<T> flatten_points(std::span<const geom::Point2> pts) {
  std::vector<T> out;
  out.reserve(pts.size() * 2);
  for (const auto& p : pts) {
    out.push_back(static_cast<T>(p.x));
    out.push_back(static_cast<T>(p.y));
  }
  return out;
}

// L1 between gathered prediction rows and ground-truth points.
template <typename T>
diff::Var<T> l1_loss_sum(diff::Tape<T>& tape, diff::Var<T> pred_rows,
                         const std::vector<T>& gt_flat) {
  diff::Var<T> gt = tape.constant(tape.shape(pred_rows), gt_flat);
  return tape.sum_all(tape.abs(tape.sub(pred_rows, gt)));
}

}  // namespace

template <typename T>
LayerLoss<T> decoder_layer_loss(diff::Tape<T>& tape, const DecoderLayerVars<T>& vars,
                                std::span<const GtInstance> gts,
                                const LossConfig& cfg, int n_queries,
                                int n_points, bool use_boundary) {
  const int K = n_queries, N = n_points;
  const int G = static_cast<int>(gts.size());
  const auto inst_vals = tape.value(vars.inst_logits);
  const auto char_shape = tape.shape(vars.char_logits);
  const int V1 = char_shape.back();

  // Detached view for the matcher.
  diff::Var<T> char_ls = tape.log_softmax(vars.char_logits);
  const auto ls_vals = tape.value(char_ls);
  const auto center_vals = tape.value(vars.center);
  std::vector<QueryPrediction> preds(K);
  for (int k = 0; k < K; ++k) {
    QueryPrediction& q = preds[k];
    double mean_p = 0.0;
    for (int n = 0; n < N; ++n) {
      mean_p += 1.0 / (1.0 + std::exp(-static_cast<double>(inst_vals[k * N + n])));
    }
    q.prob = mean_p / N;
    q.log_probs.assign(ls_vals.begin() + static_cast<size_t>(k) * N * V1,
                       ls_vals.begin() + static_cast<size_t>(k + 1) * N * V1);
    q.center.resize(N);
    for (int n = 0; n < N; ++n) {
      q.center[n] = {static_cast<double>(center_vals[(k * N + n) * 2]),
                     static_cast<double>(center_vals[(k * N + n) * 2 + 1])};
    }
  }

  LayerLoss<T> out;
  out.match = G > 0 ? hungarian(build_cost_matrix(gts, preds, cfg)) : MatchResult{};

  std::vector<T> pos_mask(static_cast<size_t>(K) * N, T(0));
  for (int g = 0; g < G; ++g) {
    const int k = out.match.assignment[g];
    std::fill(pos_mask.begin() + static_cast<size_t>(k) * N,
              pos_mask.begin() + static_cast<size_t>(k + 1) * N, T(1));
  }
  diff::Var<T> cls = focal_loss_sum(tape, vars.inst_logits, pos_mask, cfg);
  out.parts.cls = static_cast<double>(tape.value(cls)[0]);
  diff::Var<T> loss = tape.scale(cls, static_cast<T>(cfg.lambda_cls));

  if (G > 0) {
    // Text: CTC per matched query on its N log-prob rows.
    diff::Var<T> text;
    for (int g = 0; g < G; ++g) {
      const int k = out.match.assignment[g];
      diff::Var<T> rows = tape.slice_rows(char_ls, k * N, (k + 1) * N);
      diff::Var<T> nll = ctc_loss_node(tape, rows, gts[g].label);
      text = g == 0 ? nll : tape.add(text, nll);
    }
    out.parts.text = static_cast<double>(tape.value(text)[0]);
    loss = tape.add(loss, tape.scale(text, static_cast<T>(cfg.lambda_text)));

    // Center coordinates, matched queries only.
    std::vector<int> rows_idx;
    std::vector<T> gt_centers;
    for (int g = 0; g < G; ++g) {
      const int k = out.match.assignment[g];
      for (int n = 0; n < N; ++n) rows_idx.push_back(k * N + n);
      const auto flat = flatten_points<T>(gts[g].center);
      gt_centers.insert(gt_centers.end(), flat.begin(), flat.end());
    }
    diff::Var<T> coord =
        l1_loss_sum(tape, tape.gather_rows(vars.center, rows_idx), gt_centers);
    out.parts.coord = static_cast<double>(tape.value(coord)[0]);
    loss = tape.add(loss, tape.scale(coord, static_cast<T>(cfg.lambda_coord)));

    if (use_boundary && cfg.lambda_bd != 0.0) {
      std::vector<T> gt_top, gt_bot;
      bool all_have = true;
      for (int g = 0; g < G; ++g) {
        if (gts[g].top.empty() || gts[g].bot.empty()) {
          all_have = false;
          break;
        }
        const auto ft = flatten_points<T>(gts[g].top);
        const auto fb = flatten_points<T>(gts[g].bot);
        gt_top.insert(gt_top.end(), ft.begin(), ft.end());
        gt_bot.insert(gt_bot.end(), fb.begin(), fb.end());
      }
      if (all_have) {
        diff::Var<T> bd =
            tape.add(l1_loss_sum(tape, tape.gather_rows(vars.top, rows_idx), gt_top),
                     l1_loss_sum(tape, tape.gather_rows(vars.bot, rows_idx), gt_bot));
        out.parts.bd = static_cast<double>(tape.value(bd)[0]);
        loss = tape.add(loss, tape.scale(bd, static_cast<T>(cfg.lambda_bd)));
      }
    }
  }
  out.loss = loss;
  return out;
}

template <typename T>
LayerLoss<T> encoder_loss(diff::Tape<T>& tape, diff::Var<T> scores,
                          diff::Var<T> ctrl, std::span<const GtInstance> gts,
                          const LossConfig& cfg, int n_points) {
  const int P = tape.shape(scores)[0];
  const int G = static_cast<int>(gts.size());
  const int N = n_points;
  const auto score_vals = tape.value(scores);
  const auto ctrl_vals = tape.value(ctrl);

  // Bernstein matrix rows for the N shared sampling parameters.
  std::vector<T> bern(static_cast<size_t>(N) * 4);
  for (int n = 0; n < N; ++n) {
    const double t = static_cast<double>(n) / (N - 1);
    const double u = 1.0 - t;
    bern[n * 4 + 0] = static_cast<T>(u * u * u);
    bern[n * 4 + 1] = static_cast<T>(3 * u * u * t);
    bern[n * 4 + 2] = static_cast<T>(3 * u * t * t);
    bern[n * 4 + 3] = static_cast<T>(t * t * t);
  }

  LayerLoss<T> out;
  if (G > 0) {
    // Detached sampled points of every proposal for the matching cost.
    CostMatrix cm(G, P);
    std::vector<geom::Point2> sampled(N);
    for (int i = 0; i < P; ++i) {
      for (int n = 0; n < N; ++n) {
        double x = 0.0, y = 0.0;
        for (int j = 0; j < 4; ++j) {
          x += static_cast<double>(bern[n * 4 + j]) * static_cast<double>(ctrl_vals[i * 8 + 2 * j]);
          y += static_cast<double>(bern[n * 4 + j]) * static_cast<double>(ctrl_vals[i * 8 + 2 * j + 1]);
        }
        sampled[n] = {x, y};
      }
      const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(score_vals[i])));
      const double fc = focal_cost(p, cfg.focal_alpha, cfg.focal_gamma);
      for (int g = 0; g < G; ++g) {
        cm.at(g, i) = cfg.lambda_cls * fc +
                      cfg.lambda_coord * coord_cost(gts[g].center, sampled);
      }
    }
    out.match = hungarian(cm);
  }

  std::vector<T> pos_mask(P, T(0));
  for (int g = 0; g < G; ++g) pos_mask[out.match.assignment[g]] = T(1);
  diff::Var<T> cls = focal_loss_sum(tape, scores, pos_mask, cfg);
  out.parts.cls = static_cast<double>(tape.value(cls)[0]);
  diff::Var<T> loss = tape.scale(cls, static_cast<T>(cfg.lambda_cls));

  if (G > 0) {
    // Differentiable sampled points of the matched proposals:
    // [G,N,4] x [G,4,2] batched with the constant Bernstein matrix.
    std::vector<int> rows_idx(out.match.assignment.begin(), out.match.assignment.end());
    diff::Var<T> matched = tape.gather_rows(ctrl, rows_idx);     // [G, 8]
    diff::Var<T> cpts = tape.reshape(matched, {G, 4, 2});
    std::vector<T> bern_tiled(static_cast<size_t>(G) * N * 4);
    for (int g = 0; g < G; ++g) {
      std::copy(bern.begin(), bern.end(), bern_tiled.begin() + static_cast<size_t>(g) * N * 4);
    }
    diff::Var<T> bmat = tape.constant({G, N, 4}, std::move(bern_tiled));
    diff::Var<T> pts = tape.reshape(tape.bmm(bmat, cpts), {G * N, 2});
    std::vector<T> gt_flat;
    for (int g = 0; g < G; ++g) {
      const auto f = flatten_points<T>(gts[g].center);
      gt_flat.insert(gt_flat.end(), f.begin(), f.end());
    }
    diff::Var<T> coord = l1_loss_sum(tape, pts, gt_flat);
    out.parts.coord = static_cast<double>(tape.value(coord)[0]);
    loss = tape.add(loss, tape.scale(coord, static_cast<T>(cfg.lambda_coord)));
  }
  out.loss = loss;
  return out;
}

template LayerLoss<float> decoder_layer_loss<float>(
    diff::Tape<float>&, const DecoderLayerVars<float>&, std::span<const GtInstance>,
    const LossConfig&, int, int, bool);
template LayerLoss<double> decoder_layer_loss<double>(
    diff::Tape<double>&, const DecoderLayerVars<double>&, std::span<const GtInstance>,
    const LossConfig&, int, int, bool);
template LayerLoss<float> encoder_loss<float>(diff::Tape<float>&, diff::Var<float>,
                                              diff::Var<float>, std::span<const GtInstance>,
                                              const LossConfig&, int);
template LayerLoss<double> encoder_loss<double>(diff::Tape<double>&, diff::Var<double>,
                                                diff::Var<double>, std::span<const GtInstance>,
                                                const LossConfig&, int);

}  // namespace textspot::match
