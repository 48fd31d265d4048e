#include "textspot/annotations.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace textspot::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void schema_error(size_t image_idx, size_t inst_idx,
                               const std::string& field, const std::string& what) {
  throw geom::AnnotationError("annotations: image " + std::to_string(image_idx) +
                              " instance " + std::to_string(inst_idx) + " field '" +
                              field + "': " + what);
}

void validate_instance(const AnnotationInstance& inst, size_t ii, size_t jj) {
  const size_t n = inst.points_px.size();
  if (inst.kind == "polygon") {
    if (n < 4 || n % 2 != 0) schema_error(ii, jj, "points", "polygon needs an even count >= 4");
  } else if (inst.kind == "bezier_pair") {
    if (n != 8) schema_error(ii, jj, "points", "bezier_pair needs exactly 8 control points");
  } else if (inst.kind == "line") {
    if (n < 2) schema_error(ii, jj, "points", "line needs >= 2 points");
  } else {
    schema_error(ii, jj, "kind", "unknown kind '" + inst.kind + "'");
  }
  if (inst.transcript.empty()) schema_error(ii, jj, "transcript", "empty transcript");
}

}  // namespace

AnnotationFile load_annotation_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw geom::AnnotationError("annotations: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::parse_error& e) {
    throw geom::AnnotationError("annotations: parse error in " + path + ": " + e.what());
  }
  if (!j.contains("images") || !j["images"].is_array()) {
    throw geom::AnnotationError("annotations: missing top-level 'images' array");
  }
  AnnotationFile out;
  size_t ii = 0;
  for (const auto& jm : j["images"]) {
    AnnotationImage img;
    if (!jm.contains("file")) schema_error(ii, 0, "file", "missing");
    img.file = jm["file"].get<std::string>();
    img.width = jm.value("width", 0);
    img.height = jm.value("height", 0);
    if (img.width <= 0 || img.height <= 0) schema_error(ii, 0, "width/height", "must be positive");
    size_t jj = 0;
    for (const auto& jinst : jm.value("instances", json::array())) {
      AnnotationInstance inst;
      inst.kind = jinst.value("kind", "");
      inst.transcript = jinst.value("transcript", "");
      if (!jinst.contains("points") || !jinst["points"].is_array()) {
        schema_error(ii, jj, "points", "missing array");
      }
      for (const auto& jp : jinst["points"]) {
        if (!jp.is_array() || jp.size() != 2) schema_error(ii, jj, "points", "entries must be [x,y]");
        inst.points_px.push_back({jp[0].get<double>(), jp[1].get<double>()});
      }
      validate_instance(inst, ii, jj);
      img.instances.push_back(std::move(inst));
      ++jj;
    }
    out.images.push_back(std::move(img));
    ++ii;
  }
  return out;
}

void save_annotation_file(const AnnotationFile& ann, const std::string& path) {
  json jimages = json::array();
  for (const auto& img : ann.images) {
    json jinsts = json::array();
    for (const auto& inst : img.instances) {
      json pts = json::array();
      for (const auto& p : inst.points_px) pts.push_back({p.x, p.y});
      jinsts.push_back({{"kind", inst.kind},
                        {"points", std::move(pts)},
                        {"transcript", inst.transcript}});
    }
    jimages.push_back({{"file", img.file},
                       {"width", img.width},
                       {"height", img.height},
                       {"instances", std::move(jinsts)}});
  }
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw geom::AnnotationError("annotations: cannot write " + path);
  os << json{{"images", std::move(jimages)}}.dump(2) << "\n";
}

Dataset load_dataset(const std::string& json_path, const GlyphSet& glyphs,
                     int n_points) {
  const AnnotationFile ann = load_annotation_file(json_path);
  const fs::path base = fs::path(json_path).parent_path();
  Dataset ds;
  size_t ii = 0;
  for (const auto& jm : ann.images) {
    LoadedScene scene;
    scene.image = read_ppm((base / jm.file).string());
    const double w = jm.width, h = jm.height;
    size_t jj = 0;
    for (const auto& inst : jm.instances) {
      try {
        glyphs.encode(inst.transcript);
      } catch (const std::invalid_argument& e) {
        schema_error(ii, jj, "transcript", e.what());
      }
      std::vector<geom::Point2> pts(inst.points_px.size());
      for (size_t i = 0; i < pts.size(); ++i) {
        pts[i] = {inst.points_px[i].x / w, inst.points_px[i].y / h};
      }
      if (inst.kind == "polygon") {
        scene.gts.push_back(geom::gt_from_polygon(pts, inst.transcript, n_points));
      } else if (inst.kind == "bezier_pair") {
        // Both sides in reading order: points 0..3 top, 4..7 bottom.
        const geom::CubicBezier top{pts[0], pts[1], pts[2], pts[3]};
        const geom::CubicBezier bot{pts[4], pts[5], pts[6], pts[7]};
        const geom::CubicBezier center = geom::center_curve_from_sides(top, bot);
        geom::TextInstanceGT gt;
        gt.center = geom::sample_uniform(center, n_points);
        gt.top = geom::sample_uniform(top, n_points);
        gt.bot = geom::sample_uniform(bot, n_points);
        gt.transcript = inst.transcript;
        scene.gts.push_back(std::move(gt));
      } else {  // line
        scene.gts.push_back(geom::gt_from_line(pts, inst.transcript, n_points));
      }
      ++jj;
    }
    ds.scenes.push_back(std::move(scene));
    ds.files.push_back(jm.file);
    ++ii;
  }
  return ds;
}

void save_dataset(std::span<const LoadedScene> scenes, const std::string& dir,
                  uint64_t seed) {
  fs::create_directories(dir);
  AnnotationFile ann;
  for (size_t i = 0; i < scenes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "scene_%04zu.ppm", i);
    write_ppm(scenes[i].image, (fs::path(dir) / name).string());
    AnnotationImage img;
    img.file = name;
    img.width = scenes[i].image.width;
    img.height = scenes[i].image.height;
    for (const auto& gt : scenes[i].gts) {
      AnnotationInstance inst;
      inst.transcript = gt.transcript;
      if (gt.has_boundary()) {
        inst.kind = "polygon";
        const auto poly = geom::polygon_from_boundary(gt.top, gt.bot);
        for (const auto& p : poly) {
          inst.points_px.push_back({p.x * img.width, p.y * img.height});
        }
      } else {
        inst.kind = "line";
        for (const auto& p : gt.center) {
          inst.points_px.push_back({p.x * img.width, p.y * img.height});
        }
      }
      img.instances.push_back(std::move(inst));
    }
    ann.images.push_back(std::move(img));
  }
  save_annotation_file(ann, (fs::path(dir) / "annotations.json").string());
  std::ofstream os((fs::path(dir) / "seeds.json").string(), std::ios::trunc);
  os << nlohmann::json{{"seed", seed}, {"count", scenes.size()}}.dump(2) << "\n";
}

std::vector<BatchItem> make_batch(const Dataset& ds, std::span<const int> indices,
                                  int target_w, int target_h) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
  std::vector<BatchItem> out;
  out.reserve(indices.size());
  for (int idx : indices) {
    if (idx < 0 || idx >= static_cast<int>(ds.scenes.size())) {
      throw std::out_of_range("make_batch: index " + std::to_string(idx) +
                              " outside dataset of " + std::to_string(ds.scenes.size()));
    }
    const LoadedScene& src = ds.scenes[idx];
    BatchItem item;
    item.source_index = idx;
    if (src.image.width == target_w && src.image.height == target_h) {
      item.image = src.image;
      item.gts = src.gts;
      out.push_back(std::move(item));
      continue;
    }
    const double s = std::min(static_cast<double>(target_w) / src.image.width,
                              static_cast<double>(target_h) / src.image.height);
    const int sw = std::max(1, static_cast<int>(std::lround(src.image.width * s)));
    const int sh = std::max(1, static_cast<int>(std::lround(src.image.height * s)));
    const Image scaled = resize_bilinear(src.image, sw, sh);
    item.image = Image(target_w, target_h, {128, 128, 128});
    for (int y = 0; y < sh; ++y) {
      std::copy(scaled.px(0, y), scaled.px(0, y) + static_cast<size_t>(sw) * 3,
                item.image.px(0, y));
    }
    item.valid_x = static_cast<double>(sw) / target_w;
    item.valid_y = static_cast<double>(sh) / target_h;
    item.gts = src.gts;
    for (auto& gt : item.gts) {
      const auto remap = [&](geom::Point2 p) {
        return geom::Point2{p.x * item.valid_x, p.y * item.valid_y};
      };
      for (auto& p : gt.center) p = remap(p);
      for (auto& p : gt.top) p = remap(p);
      for (auto& p : gt.bot) p = remap(p);
    }
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace textspot::data
