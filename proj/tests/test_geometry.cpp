#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "textspot/geometry.hpp"
#include "textspot/polygon.hpp"
#include "textspot/rng.hpp"
#include "textspot/scene.hpp"

using namespace textspot;
using geom::CubicBezier;
using geom::Point2;

namespace {

const CubicBezier kLine{{0, 0}, {1.0 / 3, 0}, {2.0 / 3, 0}, {1, 0}};
const CubicBezier kArch{{0, 0}, {0, 1}, {1, 1}, {1, 0}};

CubicBezier random_curve(Rng& rng) {
  const auto p = [&] { return Point2{rng.uniform(), rng.uniform()}; };
  return {p(), p(), p(), p()};
}

}  // namespace

TEST_CASE("bezier_eval endpoints and identities") {
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const CubicBezier c = random_curve(rng);
    const Point2 a = geom::bezier_eval(c, 0.0);
    const Point2 b = geom::bezier_eval(c, 1.0);
    CHECK(a.x == c.p0.x);
    CHECK(a.y == c.p0.y);
    CHECK(b.x == c.p3.x);
    CHECK(b.y == c.p3.y);
  }
  // Identity parameterization on a straight line with evenly spaced controls.
  const Point2 q = geom::bezier_eval(kLine, 0.25);
  CHECK(q.x == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(q.y == doctest::Approx(0.0).epsilon(1e-12));
  // Hand-evaluated Bernstein weights (1/8, 3/8, 3/8, 1/8) on the arch.
  const Point2 m = geom::bezier_eval(kArch, 0.5);
  CHECK(m.x == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(m.y == doctest::Approx(0.75).epsilon(1e-12));
  CHECK_THROWS_AS(geom::bezier_eval(kArch, -0.01), std::domain_error);
  CHECK_THROWS_AS(geom::bezier_eval(kArch, 1.01), std::domain_error);
  CHECK_THROWS_AS(geom::bezier_eval(kArch, std::nan("")), std::domain_error);
}

TEST_CASE("sample_uniform spacing and errors") {
  const auto s3 = geom::sample_uniform(kLine, 3);
  CHECK(s3[0].x == 0.0);
  CHECK(s3[1].x == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s3[2].x == 1.0);
  const auto s2 = geom::sample_uniform(kArch, 2);
  CHECK(s2[0].x == kArch.p0.x);
  CHECK(s2[1].x == kArch.p3.x);
  const auto s5 = geom::sample_uniform(kArch, 5);
  CHECK(s5[2].x == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(s5[2].y == doctest::Approx(0.75).epsilon(1e-12));
  CHECK_THROWS_AS(geom::sample_uniform(kArch, 1), std::domain_error);
}

TEST_CASE("convex hull property of sampled points") {
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    const CubicBezier c = random_curve(rng);
    const std::vector<Point2> hull_src = {c.p0, c.p1, c.p2, c.p3};
    // The hull of 4 points is covered by the four triangles they span.
    for (const Point2& s : geom::sample_uniform(c, 17)) {
      const auto in_tri = [&](Point2 a, Point2 b, Point2 cc) {
        const double d1 = geom::cross(b - a, s - a);
        const double d2 = geom::cross(cc - b, s - b);
        const double d3 = geom::cross(a - cc, s - cc);
        const bool has_neg = d1 < -1e-12 || d2 < -1e-12 || d3 < -1e-12;
        const bool has_pos = d1 > 1e-12 || d2 > 1e-12 || d3 > 1e-12;
        return !(has_neg && has_pos);
      };
      const bool in_hull = in_tri(c.p0, c.p1, c.p2) || in_tri(c.p0, c.p2, c.p3) ||
                           in_tri(c.p0, c.p1, c.p3) || in_tri(c.p1, c.p2, c.p3);
      CHECK(in_hull);
    }
  }
}

TEST_CASE("center_curve_from_sides averaging and linearity") {
  const CubicBezier top{{0, 0}, {0.3, 0.1}, {0.6, 0.1}, {1, 0}};
  const CubicBezier bot{{0, 0.2}, {0.3, 0.3}, {0.6, 0.3}, {1, 0.2}};
  const CubicBezier c = geom::center_curve_from_sides(top, bot);
  CHECK(c.p0.x == doctest::Approx(0.0));
  CHECK(c.p0.y == doctest::Approx(0.1));
  CHECK(c.p1.x == doctest::Approx(0.3));
  CHECK(c.p1.y == doctest::Approx(0.2));
  CHECK(c.p3.y == doctest::Approx(0.1));

  const CubicBezier same = geom::center_curve_from_sides(top, top);
  CHECK(same.p1.x == top.p1.x);
  CHECK(same.p2.y == top.p2.y);

  // Sampling commutes with control-point averaging (linearity).
  Rng rng(13);
  for (int i = 0; i < 20; ++i) {
    const CubicBezier a = random_curve(rng);
    const CubicBezier b = random_curve(rng);
    const CubicBezier mid = geom::center_curve_from_sides(a, b);
    const auto sa = geom::sample_uniform(a, 9);
    const auto sb = geom::sample_uniform(b, 9);
    const auto sm = geom::sample_uniform(mid, 9);
    for (int n = 0; n < 9; ++n) {
      CHECK(sm[n].x == doctest::Approx((sa[n].x + sb[n].x) / 2).epsilon(1e-12));
      CHECK(sm[n].y == doctest::Approx((sa[n].y + sb[n].y) / 2).epsilon(1e-12));
    }
  }
}

TEST_CASE("fit_bezier_to_polyline") {
  // Collinear, equally spaced: exact representation.
  std::vector<Point2> line;
  for (int i = 0; i <= 8; ++i) line.push_back({i / 8.0, 0.0});
  const CubicBezier f = geom::fit_bezier_to_polyline(line);
  CHECK(f.p0.x == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(f.p1.x == doctest::Approx(1.0 / 3).epsilon(1e-9));
  CHECK(f.p2.x == doctest::Approx(2.0 / 3).epsilon(1e-9));
  CHECK(f.p3.x == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(f.p1.y) < 1e-9);

  // Two points: the degenerate thirds rule.
  const std::vector<Point2> two = {{0.2, 0.4}, {0.8, 0.1}};
  const CubicBezier d = geom::fit_bezier_to_polyline(two);
  CHECK(d.p1.x == doctest::Approx(0.2 + 0.6 / 3));
  CHECK(d.p1.y == doctest::Approx(0.4 - 0.3 / 3));
  CHECK(d.p2.x == doctest::Approx(0.2 + 1.2 / 3));

  CHECK_THROWS_AS(geom::fit_bezier_to_polyline(std::vector<Point2>{{0, 0}}),
                  std::domain_error);

  // Round-trip: points sampled from a cubic are reproduced within 1e-6.
  Rng rng(14);
  for (int i = 0; i < 20; ++i) {
    CubicBezier c = random_curve(rng);
    // Keep the curve tame so chord-length parameterization stays close.
    c.p1 = geom::midpoint(c.p0, c.p3) + (c.p1 - geom::midpoint(c.p0, c.p3)) * 0.25;
    c.p2 = geom::midpoint(c.p0, c.p3) + (c.p2 - geom::midpoint(c.p0, c.p3)) * 0.25;
    const auto pts = geom::sample_uniform(c, 10);
    const CubicBezier r = geom::fit_bezier_to_polyline(pts);
    const auto rs = geom::sample_uniform(r, 10);
    for (int n = 0; n < 10; ++n) {
      CHECK(std::abs(rs[n].x - pts[n].x) < 1e-6);
      CHECK(std::abs(rs[n].y - pts[n].y) < 1e-6);
    }
  }
}

TEST_CASE("gt_from_polygon rectangle and invariants") {
  const std::vector<Point2> rect = {{0, 0}, {1, 0}, {1, 0.2}, {0, 0.2}};
  const auto gt = geom::gt_from_polygon(rect, "AB", 5);
  REQUIRE(gt.n_points() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(gt.center[i].x == doctest::Approx(i / 4.0).epsilon(1e-9));
    CHECK(gt.center[i].y == doctest::Approx(0.1).epsilon(1e-9));
  }
  const auto gt25 = geom::gt_from_polygon(rect, "AB", 25);
  for (const auto& p : gt25.center) CHECK(p.y == doctest::Approx(0.1).epsilon(1e-9));

  CHECK_THROWS_AS(geom::gt_from_polygon(std::vector<Point2>{{0, 0}, {1, 0}, {1, 1}},
                                        "A", 5),
                  geom::AnnotationError);

  // Averaging invariant on a curved generator-style polygon.
  Rng rng(15);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Point2> top(8), bot(8);
    const double bend = rng.uniform(-0.1, 0.1);
    for (int i = 0; i < 8; ++i) {
      const double t = i / 7.0;
      const double y = 0.3 + bend * std::sin(3.1415926 * t);
      top[i] = {0.1 + 0.8 * t, y - 0.08};
      bot[i] = {0.1 + 0.8 * t, y + 0.08};
    }
    auto poly = top;
    poly.insert(poly.end(), bot.rbegin(), bot.rend());
    const auto g = geom::gt_from_polygon(poly, "AC", 9);
    for (int i = 0; i < 9; ++i) {
      CHECK(g.center[i].x ==
            doctest::Approx((g.top[i].x + g.bot[i].x) / 2).epsilon(1e-9));
      CHECK(g.center[i].y ==
            doctest::Approx((g.top[i].y + g.bot[i].y) / 2).epsilon(1e-9));
    }
  }
}

TEST_CASE("reading order reversal flips the center sequence") {
  std::vector<Point2> top(6), bot(6);
  for (int i = 0; i < 6; ++i) {
    const double t = i / 5.0;
    top[i] = {0.1 + 0.7 * t, 0.2 + 0.05 * t};
    bot[i] = {0.1 + 0.7 * t, 0.32 + 0.05 * t};
  }
  auto poly = top;
  poly.insert(poly.end(), bot.rbegin(), bot.rend());
  // Reversed orientation: bottom-reversed becomes the first half.
  std::vector<Point2> rpoly(poly.rbegin(), poly.rend());
  const auto g = geom::gt_from_polygon(poly, "AC", 7);
  const auto gr = geom::gt_from_polygon(rpoly, "AC", 7);
  for (int i = 0; i < 7; ++i) {
    CHECK(gr.center[i].x == doctest::Approx(g.center[6 - i].x).epsilon(1e-9));
    CHECK(gr.center[i].y == doctest::Approx(g.center[6 - i].y).epsilon(1e-9));
  }
}

TEST_CASE("gt_from_line") {
  const std::vector<Point2> two = {{0.1, 0.5}, {0.9, 0.5}};
  const auto gt = geom::gt_from_line(two, "ACE", 7);
  CHECK(!gt.has_boundary());
  for (int i = 0; i < 7; ++i) {
    CHECK(gt.center[i].x == doctest::Approx(0.1 + 0.8 * i / 6.0).epsilon(1e-9));
  }
  CHECK_THROWS_AS(geom::gt_from_line(std::vector<Point2>{{0.5, 0.5}}, "A", 5),
                  geom::AnnotationError);

  // Cross-check against a polygon-derived center polyline.
  const std::vector<Point2> rect = {{0, 0.1}, {1, 0.1}, {1, 0.3}, {0, 0.3}};
  const auto gp = geom::gt_from_polygon(rect, "AC", 9);
  const auto gl = geom::gt_from_line(gp.center, "AC", 9);
  for (int i = 0; i < 9; ++i) {
    CHECK(std::abs(gl.center[i].x - gp.center[i].x) < 1e-3);
    CHECK(std::abs(gl.center[i].y - gp.center[i].y) < 1e-3);
  }
}

TEST_CASE("perturb_line") {
  const std::vector<Point2> rect = {{0, 0}, {1, 0}, {1, 0.2}, {0, 0.2}};
  const auto gt = geom::gt_from_polygon(rect, "ACE", 9);
  Rng rng(16);

  SUBCASE("identity") {
    const auto out = geom::perturb_line(gt, 0.0, 0.0, rng);
    for (int i = 0; i < 9; ++i) {
      CHECK(out[i].x == gt.center[i].x);
      CHECK(out[i].y == gt.center[i].y);
    }
  }
  SUBCASE("full shift reaches an edge") {
    const auto out = geom::perturb_line(gt, 1.0, 0.0, rng);
    for (const auto& p : out) {
      const bool on_top = std::abs(p.y - 0.0) < 1e-9;
      const bool on_bot = std::abs(p.y - 0.2) < 1e-9;
      CHECK((on_top || on_bot));
    }
  }
  SUBCASE("full shrink collapses to the midpoint sample") {
    const auto out = geom::perturb_line(gt, 0.0, 1.0, rng);
    for (const auto& p : out) {
      CHECK(p.x == doctest::Approx(0.5).epsilon(1e-6));
      CHECK(p.y == doctest::Approx(0.1).epsilon(1e-6));
    }
  }
  SUBCASE("domain errors") {
    CHECK_THROWS_AS(geom::perturb_line(gt, -0.1, 0.0, rng), std::domain_error);
    CHECK_THROWS_AS(geom::perturb_line(gt, 0.0, 1.1, rng), std::domain_error);
    geom::TextInstanceGT line_only;
    line_only.center = gt.center;
    CHECK_THROWS_AS(geom::perturb_line(line_only, 0.5, 0.0, rng), std::domain_error);
  }
}

TEST_CASE("polygon_from_boundary") {
  const std::vector<Point2> top = {{0, 0}, {1, 0}};
  const std::vector<Point2> bot = {{0, 1}, {1, 1}};
  const auto poly = geom::polygon_from_boundary(top, bot);
  REQUIRE(poly.size() == 4);
  CHECK(poly[2].x == 1.0);
  CHECK(poly[2].y == 1.0);
  CHECK(poly[3].x == 0.0);

  const auto degenerate = geom::polygon_from_boundary(top, top);
  CHECK(geom::area(degenerate) == doctest::Approx(0.0));

  CHECK_THROWS_AS(
      geom::polygon_from_boundary(top, std::vector<Point2>{{0, 1}}),
      std::domain_error);

  // Round-trip: rebuilt polygon area close to the source polygon's.
  const std::vector<Point2> rect = {{0.1, 0.1}, {0.9, 0.1}, {0.9, 0.34}, {0.1, 0.34}};
  const auto gt = geom::gt_from_polygon(rect, "AC", 25);
  const auto rebuilt = geom::polygon_from_boundary(gt.top, gt.bot);
  CHECK(geom::area(rebuilt) ==
        doctest::Approx(geom::area(rect)).epsilon(0.02));
}
