#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "textspot/rng.hpp"

namespace textspot::geom {

/// Raised when an annotation violates its schema (odd polygon vertex count,
/// inconsistent side orientation, too few line points, ...).
struct AnnotationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  Point2 operator+(Point2 o) const { return {x + o.x, y + o.y}; }
  Point2 operator-(Point2 o) const { return {x - o.x, y - o.y}; }
  Point2 operator*(double s) const { return {x * s, y * s}; }
  bool operator==(const Point2&) const = default;
};

inline Point2 midpoint(Point2 a, Point2 b) { return {(a.x + b.x) * 0.5, (a.y + b.y) * 0.5}; }
inline double dot(Point2 a, Point2 b) { return a.x * b.x + a.y * b.y; }
inline double cross(Point2 a, Point2 b) { return a.x * b.y - a.y * b.x; }
double distance(Point2 a, Point2 b);

/// Cubic Bezier segment; control points ordered along the reading direction.
struct CubicBezier {
  Point2 p0, p1, p2, p3;
};

/// One annotated text instance, sampled at n points in reading order.
/// top/bot are empty for line-only annotations; when present they have the
/// same length as center and share its sampling parameters.
struct TextInstanceGT {
  std::vector<Point2> center;
  std::vector<Point2> top;
  std::vector<Point2> bot;
  std::string transcript;

  int n_points() const { return static_cast<int>(center.size()); }
  bool has_boundary() const { return !top.empty() && !bot.empty(); }
};

/// Evaluate the curve at parameter t via the cubic Bernstein basis.
/// Throws std::domain_error if t is outside [0, 1].
Point2 bezier_eval(const CubicBezier& c, double t);

/// n samples at t = i/(n-1); order preserves the reading direction.
std::vector<Point2> sample_uniform(const CubicBezier& c, int n);

/// Center curve: componentwise mean of the two sides' control points.
CubicBezier center_curve_from_sides(const CubicBezier& top, const CubicBezier& bot);

/// Least-squares cubic fit with endpoints pinned to the first and last input
/// points and chord-length parameterization for the interior. 2-3 points
/// fall back to linear interpolation of the interior control points.
CubicBezier fit_bezier_to_polyline(std::span<const Point2> points);

/// Polygon convention: vertices 0..k-1 are the top side in reading order,
/// vertices k..2k-1 the bottom side in reverse. Fits both sides, derives the
/// center by control-point averaging and samples n points on all three.
TextInstanceGT gt_from_polygon(std::span<const Point2> polygon,
                               std::string transcript, int n);

/// Line annotation: a single fitted curve, boundaries absent.
TextInstanceGT gt_from_line(std::span<const Point2> line,
                            std::string transcript, int n);

/// Noise model for line-annotation experiments. Each point is pushed toward
/// a per-point uniformly chosen side by `shift` of the local half-height and
/// the sampling parameters are contracted toward t=0.5 by `shrink`.
/// Requires boundary points on gt; shift/shrink outside [0,1] throw.
std::vector<Point2> perturb_line(const TextInstanceGT& gt, double shift,
                                 double shrink, Rng& rng);

/// top points in order followed by bot points reversed.
std::vector<Point2> polygon_from_boundary(std::span<const Point2> top,
                                          std::span<const Point2> bot);

}  // namespace textspot::geom
