#include "textspot/scene.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "textspot/polygon.hpp"

namespace textspot::data {

namespace {

using geom::CubicBezier;
using geom::Point2;

Point2 bezier_tangent(const CubicBezier& c, double t) {
  const double u = 1.0 - t;
  const Point2 d = (c.p1 - c.p0) * (3 * u * u) + (c.p2 - c.p1) * (6 * u * t) +
                   (c.p3 - c.p2) * (3 * t * t);
  const double len = std::hypot(d.x, d.y);
  if (len < 1e-12) return {1.0, 0.0};
  return {d.x / len, d.y / len};
}

// Cumulative arc-length table for equal-arc glyph placement.
struct ArcTable {
  std::vector<double> t;
  std::vector<double> s;
  double total = 0.0;

  explicit ArcTable(const CubicBezier& c, int segments = 256) {
    t.resize(segments + 1);
    s.resize(segments + 1);
    Point2 prev = geom::bezier_eval(c, 0.0);
    s[0] = 0.0;
    t[0] = 0.0;
    for (int i = 1; i <= segments; ++i) {
      t[i] = static_cast<double>(i) / segments;
      const Point2 p = geom::bezier_eval(c, t[i]);
      s[i] = s[i - 1] + geom::distance(prev, p);
      prev = p;
    }
    total = s.back();
  }

  double t_at(double arc) const {
    if (arc <= 0.0) return 0.0;
    if (arc >= total) return 1.0;
    const auto it = std::lower_bound(s.begin(), s.end(), arc);
    const size_t i = it - s.begin();
    const double s0 = s[i - 1], s1 = s[i];
    const double f = s1 > s0 ? (arc - s0) / (s1 - s0) : 0.0;
    return t[i - 1] + f * (t[i] - t[i - 1]);
  }
};

std::vector<Point2> ribbon_polygon(const CubicBezier& guide, double height,
                                   int side_points) {
  std::vector<Point2> top(side_points), bot(side_points);
  for (int i = 0; i < side_points; ++i) {
    const double t = static_cast<double>(i) / (side_points - 1);
    const Point2 p = geom::bezier_eval(guide, t);
    const Point2 tan = bezier_tangent(guide, t);
    const Point2 nrm{-tan.y, tan.x};
    top[i] = p - nrm * (height * 0.5);
    bot[i] = p + nrm * (height * 0.5);
  }
  return geom::polygon_from_boundary(top, bot);
}

void render_glyph(Image& img, const GlyphSet& glyphs, int cls, Point2 center_px,
                  double angle, double gw, double gh, double thickness,
                  const std::array<double, 3>& ink) {
  const auto stencil = glyphs.stencil(cls);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double half_diag = 0.5 * std::hypot(gw, gh) + 1.0;
  const int x0 = std::max(0, static_cast<int>(std::floor(center_px.x - half_diag)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(center_px.x + half_diag)));
  const int y0 = std::max(0, static_cast<int>(std::floor(center_px.y - half_diag)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(center_px.y + half_diag)));
  const double margin = 0.5 * thickness;
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5) - center_px.x;
      const double dy = (y + 0.5) - center_px.y;
      // Inverse rotation into the glyph frame.
      const double lx = ca * dx + sa * dy;
      const double ly = -sa * dx + ca * dy;
      const double u = lx / gw + 0.5;
      const double v = ly / gh + 0.5;
      if (u < 0.0 || u >= 1.0 || v < 0.0 || v >= 1.0) continue;
      const double cu = u * GlyphSet::kCols;
      const double cv = v * GlyphSet::kRows;
      bool ink_hit = false;
      const int cc = static_cast<int>(cu);
      const int cr = static_cast<int>(cv);
      for (int rr = cr - 1; rr <= cr + 1 && !ink_hit; ++rr) {
        if (rr < 0 || rr >= GlyphSet::kRows) continue;
        for (int c2 = cc - 1; c2 <= cc + 1 && !ink_hit; ++c2) {
          if (c2 < 0 || c2 >= GlyphSet::kCols) continue;
          if (!stencil[rr * GlyphSet::kCols + c2]) continue;
          if (std::abs(cu - (c2 + 0.5)) <= margin && std::abs(cv - (rr + 0.5)) <= margin) {
            ink_hit = true;
          }
        }
      }
      if (ink_hit) {
        uint8_t* p = img.px(x, y);
        for (int c = 0; c < 3; ++c) {
          p[c] = static_cast<uint8_t>(std::clamp(ink[c], 0.0, 255.0));
        }
      }
    }
  }
}

}  // namespace

LoadedScene render_scene(const SceneSpec& spec, const GlyphSet& glyphs, int n_points) {
  Rng rng = Rng(spec.seed).fork("render");
  const double bg = rng.uniform(190.0, 232.0);
  LoadedScene scene;
  scene.image = Image(spec.width, spec.height);
  // Flat background plus mild deterministic pixel noise.
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      const double n = rng.uniform(-5.0, 5.0);
      uint8_t* p = scene.image.px(x, y);
      for (int c = 0; c < 3; ++c) {
        p[c] = static_cast<uint8_t>(std::clamp(bg + n, 0.0, 255.0));
      }
    }
  }

  // Ground truth and overlap validation first, then rasterization.
  std::vector<std::vector<Point2>> polys;
  for (const TextPlacement& inst : spec.instances) {
    const auto poly = ribbon_polygon(inst.guide, inst.height, 8);
    for (const auto& prev : polys) {
      const double inter = geom::intersection_area(prev, poly);
      const double min_area = std::min(geom::area(prev), geom::area(poly));
      if (min_area > 0.0 && inter / min_area > 0.05) {
        throw std::runtime_error("render_scene: instances overlap beyond tolerance");
      }
    }
    polys.push_back(poly);
    scene.gts.push_back(geom::gt_from_polygon(poly, inst.text, n_points));
  }

  const double wpx = spec.width, hpx = spec.height;
  for (const TextPlacement& inst : spec.instances) {
    glyphs.encode(inst.text);  // validate before drawing
    const ArcTable arcs(inst.guide);
    const int m = static_cast<int>(inst.text.size());
    const double advance = arcs.total / m;
    const double gh = inst.height * hpx * 0.72;
    const double gw = std::min(advance * wpx * 0.82, gh * 0.85);
    const double ink_v = std::clamp(bg - inst.contrast * 255.0, 0.0, 255.0);
    const std::array<double, 3> ink = {ink_v, ink_v * rng.uniform(0.9, 1.1),
                                       ink_v * rng.uniform(0.9, 1.1)};
    for (int i = 0; i < m; ++i) {
      const double t = arcs.t_at((i + 0.5) * advance);
      const Point2 c = geom::bezier_eval(inst.guide, t);
      const Point2 tan = bezier_tangent(inst.guide, t);
      const double angle = std::atan2(tan.y, tan.x);
      render_glyph(scene.image, glyphs, glyphs.cls_for(inst.text[i]),
                   {c.x * wpx, c.y * hpx}, angle, gw, gh, inst.thickness, ink);
    }
  }
  return scene;
}

SceneSpec random_scene_spec(Rng& rng, const GeneratorConfig& cfg,
                            const GlyphSet& glyphs) {
  SceneSpec spec;
  spec.width = spec.height = cfg.canvas;
  spec.seed = rng.next_u64();
  const int want = rng.uniform_int(cfg.min_instances, cfg.max_instances);

  std::vector<std::vector<Point2>> placed;
  for (int i = 0; i < want; ++i) {
    bool ok = false;
    for (int attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
      TextPlacement inst;
      const int len = rng.uniform_int(cfg.min_len, cfg.max_len);
      inst.text.clear();
      for (int j = 0; j < len; ++j) {
        inst.text.push_back(glyphs.chars()[rng.uniform_int(0, glyphs.size() - 1)]);
      }
      inst.height = rng.uniform(cfg.min_height, cfg.max_height);
      inst.thickness = rng.uniform(1.0, 1.35);
      inst.contrast = rng.uniform(0.45, 0.8);

      // Guide: a gently bent segment with direction/extent drawn uniformly.
      const double glyph_w = inst.height * 0.62;
      const double span = std::clamp(glyph_w * len * 1.15, 0.2, 0.86);
      const double angle = rng.uniform(-0.6, 0.6);
      const Point2 dir{std::cos(angle), std::sin(angle)};
      const Point2 nrm{-dir.y, dir.x};
      const double margin = inst.height * 0.8 + 0.02;
      const double ext_x = std::abs(dir.x) * span + margin;
      const double ext_y = std::abs(dir.y) * span + margin;
      if (ext_x > 0.98 || ext_y > 0.98) continue;
      const Point2 start{rng.uniform(margin, 1.0 - margin - std::max(0.0, dir.x * span)),
                         rng.uniform(margin + std::max(0.0, -dir.y * span),
                                     1.0 - margin - std::max(0.0, dir.y * span))};
      const Point2 end = start + dir * span;
      const double bend = rng.uniform(-cfg.max_bend, cfg.max_bend) * inst.height;
      inst.guide.p0 = start;
      inst.guide.p1 = start + dir * (span / 3.0) + nrm * bend;
      inst.guide.p2 = start + dir * (2.0 * span / 3.0) + nrm * bend;
      inst.guide.p3 = end;

      const auto poly = ribbon_polygon(inst.guide, inst.height, 8);
      bool inside = true;
      for (const Point2& p : poly) {
        if (p.x < 0.01 || p.x > 0.99 || p.y < 0.01 || p.y > 0.99) {
          inside = false;
          break;
        }
      }
      if (!inside) continue;
      bool clear = true;
      for (const auto& prev : placed) {
        const double inter = geom::intersection_area(prev, poly);
        const double min_area = std::min(geom::area(prev), geom::area(poly));
        if (min_area > 0.0 && inter / min_area > cfg.max_overlap) {
          clear = false;
          break;
        }
      }
      if (!clear) continue;
      placed.push_back(poly);
      spec.instances.push_back(std::move(inst));
      ok = true;
    }
    // A crowded canvas simply yields fewer instances.
  }
  if (spec.instances.empty()) {
    throw std::runtime_error("random_scene_spec: failed to place any instance");
  }
  return spec;
}

std::vector<LoadedScene> generate_scenes(int count, uint64_t seed,
                                         const GeneratorConfig& cfg,
                                         const GlyphSet& glyphs, int n_points) {
  std::vector<LoadedScene> out;
  out.reserve(count);
  const Rng root(seed);
  for (int i = 0; i < count; ++i) {
    Rng rng = root.fork("scene", static_cast<uint64_t>(i));
    out.push_back(render_scene(random_scene_spec(rng, cfg, glyphs), glyphs, n_points));
  }
  return out;
}

// ------------------------------------------------------------------- augment

namespace {

Point2 rotate_point(Point2 p, Point2 center, double ca, double sa) {
  const Point2 d = p - center;
  return {center.x + ca * d.x - sa * d.y, center.y + sa * d.x + ca * d.y};
}

bool all_points_inside(const geom::TextInstanceGT& gt, double eps = 0.002) {
  const auto ok = [eps](const Point2& p) {
    return p.x >= -eps && p.x <= 1 + eps && p.y >= -eps && p.y <= 1 + eps;
  };
  for (const auto& p : gt.center)
    if (!ok(p)) return false;
  for (const auto& p : gt.top)
    if (!ok(p)) return false;
  for (const auto& p : gt.bot)
    if (!ok(p)) return false;
  return true;
}

std::array<uint8_t, 3> corner_fill(const Image& img) {
  std::array<int, 3> acc = {0, 0, 0};
  const std::array<std::pair<int, int>, 4> corners = {
      {{0, 0}, {img.width - 1, 0}, {0, img.height - 1}, {img.width - 1, img.height - 1}}};
  for (const auto& [x, y] : corners) {
    const uint8_t* p = img.px(x, y);
    for (int c = 0; c < 3; ++c) acc[c] += p[c];
  }
  return {static_cast<uint8_t>(acc[0] / 4), static_cast<uint8_t>(acc[1] / 4),
          static_cast<uint8_t>(acc[2] / 4)};
}

void transform_points(std::vector<geom::TextInstanceGT>& gts,
                      const std::function<Point2(Point2)>& f) {
  for (auto& gt : gts) {
    for (auto& p : gt.center) p = f(p);
    for (auto& p : gt.top) p = f(p);
    for (auto& p : gt.bot) p = f(p);
  }
}

}  // namespace

void augment(Image& image, std::vector<geom::TextInstanceGT>& gts, Rng& rng,
             const AugmentPolicy& policy) {
  if (policy.rotate && !gts.empty()) {
    const double max_rad = policy.max_angle_deg * M_PI / 180.0;
    for (int attempt = 0; attempt < 10; ++attempt) {
      const double angle = rng.uniform(-max_rad, max_rad);
      const double ca = std::cos(angle), sa = std::sin(angle);
      auto rotated = gts;
      transform_points(rotated, [&](Point2 p) {
        return rotate_point(p, {0.5, 0.5}, ca, sa);
      });
      std::vector<geom::TextInstanceGT> kept;
      for (auto& gt : rotated) {
        if (all_points_inside(gt)) kept.push_back(std::move(gt));
      }
      if (kept.empty()) continue;  // resample the angle
      image = rotate_about_center(image, angle, corner_fill(image));
      gts = std::move(kept);
      break;
    }
  }

  if (policy.crop && !gts.empty()) {
    // Instance-aware: the crop window must contain one instance completely.
    const int pick = rng.uniform_int(0, static_cast<int>(gts.size()) - 1);
    double minx = 1.0, miny = 1.0, maxx = 0.0, maxy = 0.0;
    const auto extend = [&](const Point2& p) {
      minx = std::min(minx, p.x);
      miny = std::min(miny, p.y);
      maxx = std::max(maxx, p.x);
      maxy = std::max(maxy, p.y);
    };
    for (const auto& p : gts[pick].center) extend(p);
    for (const auto& p : gts[pick].top) extend(p);
    for (const auto& p : gts[pick].bot) extend(p);
    const double pad = 0.02;
    const double x0 = rng.uniform(0.0, std::max(0.0, minx - pad));
    const double y0 = rng.uniform(0.0, std::max(0.0, miny - pad));
    const double x1 = rng.uniform(std::min(1.0, maxx + pad), 1.0);
    const double y1 = rng.uniform(std::min(1.0, maxy + pad), 1.0);
    const int px0 = static_cast<int>(x0 * image.width);
    const int py0 = static_cast<int>(y0 * image.height);
    const int pw = std::max(8, static_cast<int>((x1 - x0) * image.width));
    const int ph = std::max(8, static_cast<int>((y1 - y0) * image.height));
    if (px0 + pw <= image.width && py0 + ph <= image.height) {
      const Image cropped = crop(image, px0, py0, pw, ph);
      const int tw = image.width, th = image.height;
      image = resize_bilinear(cropped, tw, th);
      const double fx0 = static_cast<double>(px0) / tw;
      const double fy0 = static_cast<double>(py0) / th;
      const double fw = static_cast<double>(pw) / tw;
      const double fh = static_cast<double>(ph) / th;
      transform_points(gts, [&](Point2 p) {
        return Point2{(p.x - fx0) / fw, (p.y - fy0) / fh};
      });
      std::vector<geom::TextInstanceGT> kept;
      for (auto& gt : gts) {
        if (all_points_inside(gt)) kept.push_back(std::move(gt));
      }
      gts = std::move(kept);
    }
  }

  if (policy.resize && !gts.empty()) {
    const double s = rng.uniform(policy.min_scale, policy.max_scale);
    const int sw = std::max(8, static_cast<int>(std::lround(image.width * s)));
    const int sh = std::max(8, static_cast<int>(std::lround(image.height * s)));
    if (sw != image.width || sh != image.height) {
      const Image small = resize_bilinear(image, sw, sh);
      Image out(image.width, image.height, corner_fill(image));
      for (int y = 0; y < sh; ++y) {
        std::copy(small.px(0, y), small.px(0, y) + static_cast<size_t>(sw) * 3,
                  out.px(0, y));
      }
      const double fx = static_cast<double>(sw) / image.width;
      const double fy = static_cast<double>(sh) / image.height;
      image = std::move(out);
      transform_points(gts, [&](Point2 p) { return Point2{p.x * fx, p.y * fy}; });
    }
  }

  if (policy.color) {
    for (int c = 0; c < 3; ++c) {
      const double f = rng.uniform(0.85, 1.15);
      for (size_t i = c; i < image.rgb.size(); i += 3) {
        image.rgb[i] = static_cast<uint8_t>(
            std::clamp(image.rgb[i] * f, 0.0, 255.0));
      }
    }
  }
}

}  // namespace textspot::data
