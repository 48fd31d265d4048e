#pragma once

#include <string>
#include <vector>

#include "textspot/geometry.hpp"
#include "textspot/glyphs.hpp"
#include "textspot/image.hpp"

namespace textspot::data {

/// One text instance to render: glyphs swept along a guide curve.
struct TextPlacement {
  geom::CubicBezier guide;  // normalized canvas coordinates
  std::string text;
  double height = 0.15;     // ribbon height, normalized
  double thickness = 1.0;   // stroke dilation in stencil-cell units
  double contrast = 0.6;    // ink darkness relative to the background
};

struct SceneSpec {
  int width = 96;
  int height = 96;
  uint64_t seed = 0;  // drives background shade and pixel noise
  std::vector<TextPlacement> instances;
};

struct LoadedScene {
  Image image;
  std::vector<geom::TextInstanceGT> gts;
};

/// Deterministic per spec: glyphs at equal arc steps along the guide, rotated
/// to the local tangent; ground truth from the swept ribbon polygon through
/// gt_from_polygon. Throws if instances overlap beyond tolerance.
LoadedScene render_scene(const SceneSpec& spec, const GlyphSet& glyphs, int n_points);

struct GeneratorConfig {
  int canvas = 96;
  int min_instances = 1;
  int max_instances = 2;
  int min_len = 2;
  int max_len = 6;
  double min_height = 0.13;
  double max_height = 0.20;
  double max_bend = 0.5;      // interior control-point offset, fraction of height
  int side_points = 8;        // ribbon polygon vertices per side
  double max_overlap = 0.02;  // pairwise area fraction before re-placement
  int max_retries = 60;
};

/// Random scene drawn from bounded-curvature guide curves; placement retries
/// until instances stay inside the canvas and clear of each other.
SceneSpec random_scene_spec(Rng& rng, const GeneratorConfig& cfg, const GlyphSet& glyphs);

std::vector<LoadedScene> generate_scenes(int count, uint64_t seed,
                                         const GeneratorConfig& cfg,
                                         const GlyphSet& glyphs, int n_points);

struct AugmentPolicy {
  bool rotate = true;
  double max_angle_deg = 45.0;
  bool crop = true;
  bool resize = true;
  double min_scale = 0.7;
  double max_scale = 1.0;
  bool color = true;

  static AugmentPolicy none() {
    AugmentPolicy p;
    p.rotate = p.crop = p.resize = p.color = false;
    return p;
  }
};

/// Geometric transforms hit the image and every ground-truth point
/// identically. Rotation convention: positive angles rotate +x toward +y
/// with y pointing down the image. Instances pushed outside the canvas are
/// dropped; transforms that would drop everything are resampled (bounded).
void augment(Image& image, std::vector<geom::TextInstanceGT>& gts, Rng& rng,
             const AugmentPolicy& policy);

}  // namespace textspot::data
