#include "textspot/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace textspot::geom {

double distance(Point2 a, Point2 b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

Point2 bezier_eval(const CubicBezier& c, double t) {
  if (!(t >= 0.0 && t <= 1.0)) {
    std::ostringstream os;
    os << "bezier_eval: t=" << t << " outside [0,1]";
    throw std::domain_error(os.str());
  }
  const double u = 1.0 - t;
  const double b0 = u * u * u;
  const double b1 = 3.0 * u * u * t;
  const double b2 = 3.0 * u * t * t;
  const double b3 = t * t * t;
  return {b0 * c.p0.x + b1 * c.p1.x + b2 * c.p2.x + b3 * c.p3.x,
          b0 * c.p0.y + b1 * c.p1.y + b2 * c.p2.y + b3 * c.p3.y};
}

std::vector<Point2> sample_uniform(const CubicBezier& c, int n) {
  if (n < 2) throw std::domain_error("sample_uniform: need n >= 2");
  std::vector<Point2> out(n);
  // Endpoints assigned exactly; interior via Bernstein evaluation.
  out.front() = c.p0;
  out.back() = c.p3;
  for (int i = 1; i + 1 < n; ++i) {
    out[i] = bezier_eval(c, static_cast<double>(i) / (n - 1));
  }
  return out;
}

CubicBezier center_curve_from_sides(const CubicBezier& top, const CubicBezier& bot) {
  return {midpoint(top.p0, bot.p0), midpoint(top.p1, bot.p1),
          midpoint(top.p2, bot.p2), midpoint(top.p3, bot.p3)};
}

namespace {

CubicBezier degenerate_fit(Point2 a, Point2 b) {
  const Point2 d = b - a;
  return {a, a + d * (1.0 / 3.0), a + d * (2.0 / 3.0), b};
}

}  // namespace

CubicBezier fit_bezier_to_polyline(std::span<const Point2> pts) {
  const int m = static_cast<int>(pts.size());
  if (m < 2) throw std::domain_error("fit_bezier_to_polyline: need >= 2 points");
  if (m <= 3) return degenerate_fit(pts.front(), pts.back());

  // Chord-length parameterization.
  std::vector<double> t(m, 0.0);
  double total = 0.0;
  for (int i = 1; i < m; ++i) {
    total += distance(pts[i], pts[i - 1]);
    t[i] = total;
  }
  if (total <= 0.0) return degenerate_fit(pts.front(), pts.back());
  for (int i = 1; i < m; ++i) t[i] /= total;

  // Pin p0/p3, solve the 2x2 normal equations for p1/p2 (shared matrix for
  // the x and y coordinates).
  const Point2 p0 = pts.front();
  const Point2 p3 = pts.back();
  double a11 = 0.0, a12 = 0.0, a22 = 0.0;
  double bx1 = 0.0, bx2 = 0.0, by1 = 0.0, by2 = 0.0;
  for (int i = 0; i < m; ++i) {
    const double u = 1.0 - t[i];
    const double c0 = u * u * u;
    const double c1 = 3.0 * u * u * t[i];
    const double c2 = 3.0 * u * t[i] * t[i];
    const double c3 = t[i] * t[i] * t[i];
    const double rx = pts[i].x - c0 * p0.x - c3 * p3.x;
    const double ry = pts[i].y - c0 * p0.y - c3 * p3.y;
    a11 += c1 * c1;
    a12 += c1 * c2;
    a22 += c2 * c2;
    bx1 += c1 * rx;
    bx2 += c2 * rx;
    by1 += c1 * ry;
    by2 += c2 * ry;
  }
  const double det = a11 * a22 - a12 * a12;
  if (std::abs(det) < 1e-12) return degenerate_fit(p0, p3);
  const Point2 p1 = {(bx1 * a22 - bx2 * a12) / det, (by1 * a22 - by2 * a12) / det};
  const Point2 p2 = {(bx2 * a11 - bx1 * a12) / det, (by2 * a11 - by1 * a12) / det};
  return {p0, p1, p2, p3};
}

TextInstanceGT gt_from_polygon(std::span<const Point2> polygon,
                               std::string transcript, int n) {
  const int v = static_cast<int>(polygon.size());
  if (v < 4 || v % 2 != 0) {
    std::ostringstream os;
    os << "gt_from_polygon: vertex count " << v << " is not an even number >= 4";
    throw AnnotationError(os.str());
  }
  const int k = v / 2;
  std::vector<Point2> top_pts(polygon.begin(), polygon.begin() + k);
  std::vector<Point2> bot_pts(polygon.begin() + k, polygon.end());
  std::reverse(bot_pts.begin(), bot_pts.end());  // back into reading order

  // Both sides must run the same way once the bottom is reversed.
  const Point2 top_chord = top_pts.back() - top_pts.front();
  const Point2 bot_chord = bot_pts.back() - bot_pts.front();
  if (dot(top_chord, bot_chord) < 0.0) {
    throw AnnotationError("gt_from_polygon: top and bottom sides are oriented inconsistently");
  }

  const CubicBezier top = fit_bezier_to_polyline(top_pts);
  const CubicBezier bot = fit_bezier_to_polyline(bot_pts);
  const CubicBezier center = center_curve_from_sides(top, bot);

  TextInstanceGT gt;
  gt.center = sample_uniform(center, n);
  gt.top = sample_uniform(top, n);
  gt.bot = sample_uniform(bot, n);
  gt.transcript = std::move(transcript);
  return gt;
}

TextInstanceGT gt_from_line(std::span<const Point2> line,
                            std::string transcript, int n) {
  if (line.size() < 2) throw AnnotationError("gt_from_line: need >= 2 points");
  const CubicBezier c = fit_bezier_to_polyline(line);
  TextInstanceGT gt;
  gt.center = sample_uniform(c, n);
  gt.transcript = std::move(transcript);
  return gt;
}

std::vector<Point2> perturb_line(const TextInstanceGT& gt, double shift,
                                 double shrink, Rng& rng) {
  if (!(shift >= 0.0 && shift <= 1.0) || !(shrink >= 0.0 && shrink <= 1.0)) {
    throw std::domain_error("perturb_line: shift and shrink must lie in [0,1]");
  }
  if (!gt.has_boundary()) {
    throw std::domain_error("perturb_line: boundary points required for the shift");
  }
  const int n = gt.n_points();
  std::vector<Point2> out(n);
  if (shrink == 0.0) {
    // No resampling needed; operate on the stored points directly.
    for (int i = 0; i < n; ++i) {
      const Point2 side = rng.bernoulli(0.5) ? gt.top[i] : gt.bot[i];
      out[i] = gt.center[i] + (side - gt.center[i]) * shift;
    }
    return out;
  }
  // Contract the parameter grid toward t=0.5, then evaluate refit curves.
  const CubicBezier center = fit_bezier_to_polyline(gt.center);
  const CubicBezier top = fit_bezier_to_polyline(gt.top);
  const CubicBezier bot = fit_bezier_to_polyline(gt.bot);
  for (int i = 0; i < n; ++i) {
    const double t0 = static_cast<double>(i) / (n - 1);
    const double t = 0.5 + (t0 - 0.5) * (1.0 - shrink);
    const Point2 c = bezier_eval(center, t);
    const Point2 side = rng.bernoulli(0.5) ? bezier_eval(top, t) : bezier_eval(bot, t);
    out[i] = c + (side - c) * shift;
  }
  return out;
}

std::vector<Point2> polygon_from_boundary(std::span<const Point2> top,
                                          std::span<const Point2> bot) {
  if (top.size() != bot.size()) {
    throw std::domain_error("polygon_from_boundary: point counts differ");
  }
  std::vector<Point2> poly(top.begin(), top.end());
  poly.insert(poly.end(), bot.rbegin(), bot.rend());
  return poly;
}

}  // namespace textspot::geom
