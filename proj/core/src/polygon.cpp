#include "textspot/polygon.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace textspot::geom {

double signed_area(std::span<const Point2> poly) {
  const size_t n = poly.size();
  if (n < 3) return 0.0;
  double s = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const Point2& a = poly[i];
    const Point2& b = poly[(i + 1) % n];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * s;
}

double area(std::span<const Point2> poly) { return std::abs(signed_area(poly)); }

std::vector<Point2> clip_convex(std::span<const Point2> subject,
                                std::span<const Point2> clip) {
  std::vector<Point2> output(subject.begin(), subject.end());
  if (clip.size() < 3) return {};
  // Inside = left of each clip edge; flip edge orientation for clockwise clips.
  const double orient = signed_area(clip) >= 0.0 ? 1.0 : -1.0;
  const size_t m = clip.size();
  for (size_t e = 0; e < m && !output.empty(); ++e) {
    const Point2 c0 = clip[e];
    const Point2 c1 = clip[(e + 1) % m];
    const Point2 edge = c1 - c0;
    std::vector<Point2> input;
    input.swap(output);
    const size_t n = input.size();
    for (size_t i = 0; i < n; ++i) {
      const Point2 cur = input[i];
      const Point2 prev = input[(i + n - 1) % n];
      const double dc = orient * cross(edge, cur - c0);
      const double dp = orient * cross(edge, prev - c0);
      const bool cur_in = dc >= 0.0;
      const bool prev_in = dp >= 0.0;
      if (cur_in != prev_in) {
        const double t = dp / (dp - dc);
        output.push_back(prev + (cur - prev) * t);
      }
      if (cur_in) output.push_back(cur);
    }
  }
  return output;
}

namespace {

// Unsigned overlap of two triangles via Sutherland-Hodgman + shoelace.
double triangle_overlap(const std::array<Point2, 3>& ta,
                        const std::array<Point2, 3>& tb) {
  const auto clipped = clip_convex(std::span<const Point2>(ta.data(), 3),
                                   std::span<const Point2>(tb.data(), 3));
  return area(clipped);
}

struct FanTriangle {
  std::array<Point2, 3> v;
  double sign;  // +1 / -1 from the fan's signed area
};

// Signed fan decomposition about the first vertex. Summed with signs, the
// triangle indicators reproduce the polygon's indicator almost everywhere.
std::vector<FanTriangle> fan(std::span<const Point2> poly) {
  std::vector<FanTriangle> tris;
  for (size_t i = 1; i + 1 < poly.size(); ++i) {
    const std::array<Point2, 3> t = {poly[0], poly[i], poly[i + 1]};
    const double s = signed_area(std::span<const Point2>(t.data(), 3));
    if (s == 0.0) continue;
    tris.push_back({t, s > 0.0 ? 1.0 : -1.0});
  }
  return tris;
}

}  // namespace

double intersection_area(std::span<const Point2> a, std::span<const Point2> b) {
  if (a.size() < 3 || b.size() < 3) return 0.0;
  const auto fa = fan(a);
  const auto fb = fan(b);
  double acc = 0.0;
  for (const auto& ta : fa) {
    for (const auto& tb : fb) {
      const double ov = triangle_overlap(ta.v, tb.v);
      if (ov != 0.0) acc += ta.sign * tb.sign * ov;
    }
  }
  // Orientation of the fans flips the sign pairwise; normalize.
  const double sa = signed_area(a) >= 0.0 ? 1.0 : -1.0;
  const double sb = signed_area(b) >= 0.0 ? 1.0 : -1.0;
  return std::max(0.0, acc * sa * sb);
}

double polygon_iou(std::span<const Point2> a, std::span<const Point2> b) {
  const double inter = intersection_area(a, b);
  const double uni = area(a) + area(b) - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

bool point_in_polygon(Point2 p, std::span<const Point2> poly) {
  const size_t n = poly.size();
  if (n < 3) return false;
  bool inside = false;
  for (size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point2 a = poly[j];
    const Point2 b = poly[i];
    // On-edge test first so boundary points are counted as inside.
    const double c = cross(b - a, p - a);
    if (std::abs(c) < 1e-15 && dot(p - a, p - b) <= 0.0) return true;
    if ((b.y > p.y) != (a.y > p.y)) {
      const double x_at = b.x + (p.y - b.y) / (a.y - b.y) * (a.x - b.x);
      if (p.x < x_at) inside = !inside;
    }
  }
  return inside;
}

namespace {

bool proper_segment_intersect(Point2 a, Point2 b, Point2 c, Point2 d) {
  const double d1 = cross(b - a, c - a);
  const double d2 = cross(b - a, d - a);
  const double d3 = cross(d - c, a - c);
  const double d4 = cross(d - c, b - c);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0));
}

}  // namespace

bool is_self_intersecting(std::span<const Point2> poly) {
  const size_t n = poly.size();
  if (n < 4) return false;
  for (size_t i = 0; i < n; ++i) {
    for (size_t j = i + 1; j < n; ++j) {
      // Skip adjacent edges (they share a vertex).
      if (j == i || (j + 1) % n == i || (i + 1) % n == j) continue;
      if (proper_segment_intersect(poly[i], poly[(i + 1) % n], poly[j],
                                   poly[(j + 1) % n])) {
        return true;
      }
    }
  }
  return false;
}

}  // namespace textspot::geom
