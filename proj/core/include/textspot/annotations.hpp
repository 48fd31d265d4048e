#pragma once

#include <span>
#include <string>
#include <vector>

#include "textspot/scene.hpp"

namespace textspot::data {

/// Raw record matching the annotation JSON schema; points in absolute pixels.
struct AnnotationInstance {
  std::string kind;  // "polygon" | "bezier_pair" | "line"
  std::vector<geom::Point2> points_px;
  std::string transcript;
};

struct AnnotationImage {
  std::string file;
  int width = 0;
  int height = 0;
  std::vector<AnnotationInstance> instances;
};

struct AnnotationFile {
  std::vector<AnnotationImage> images;
};

/// Schema-validating load/save; errors name the record index and field.
AnnotationFile load_annotation_file(const std::string& path);
void save_annotation_file(const AnnotationFile& ann, const std::string& path);

struct Dataset {
  std::vector<LoadedScene> scenes;
  std::vector<std::string> files;  // empty for in-memory generator data
};

/// Loads images (ppm, relative to the json's directory) and converts each
/// instance to sampled ground truth: polygon -> gt_from_polygon, bezier_pair
/// -> side curves + center averaging, line -> gt_from_line.
Dataset load_dataset(const std::string& json_path, const GlyphSet& glyphs,
                     int n_points);

/// Writes scene_XXXX.ppm files, annotations.json (polygon records sampled
/// from each instance's boundary) and a seed manifest.
void save_dataset(std::span<const LoadedScene> scenes, const std::string& dir,
                  uint64_t seed);

struct BatchItem {
  Image image;          // letterboxed to the target size
  double valid_x = 1.0;  // fraction of the canvas covered by content
  double valid_y = 1.0;
  std::vector<geom::TextInstanceGT> gts;  // renormalized to the new canvas
  int source_index = -1;
};

/// Uniform-scale resize into the top-left of a target canvas with gray
/// padding; ground-truth coordinates renormalized accordingly.
std::vector<BatchItem> make_batch(const Dataset& ds, std::span<const int> indices,
                                  int target_w, int target_h);

}  // namespace textspot::data
