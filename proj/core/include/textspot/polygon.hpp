#pragma once

#include <span>
#include <vector>

#include "textspot/geometry.hpp"

namespace textspot::geom {

/// Signed area via the shoelace formula; positive for counterclockwise
/// winding in a y-up frame (clockwise with image-style y-down coordinates).
double signed_area(std::span<const Point2> poly);
double area(std::span<const Point2> poly);

/// Sutherland-Hodgman: clip `subject` against a convex `clip` polygon.
std::vector<Point2> clip_convex(std::span<const Point2> subject,
                                std::span<const Point2> clip);

/// Intersection area of two simple polygons. Each polygon is decomposed into
/// a signed triangle fan; the pairwise triangle overlaps (clipped with
/// Sutherland-Hodgman) are accumulated with their fan signs, which makes the
/// result exact for non-convex simple polygons as well.
double intersection_area(std::span<const Point2> a, std::span<const Point2> b);

/// Intersection over union; 0 when both areas are 0.
double polygon_iou(std::span<const Point2> a, std::span<const Point2> b);

/// Even-odd rule; boundary points count as inside.
bool point_in_polygon(Point2 p, std::span<const Point2> poly);

/// True if any two non-adjacent edges properly intersect.
bool is_self_intersecting(std::span<const Point2> poly);

}  // namespace textspot::geom
