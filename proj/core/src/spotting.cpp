#include "textspot/spotting.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "textspot/ctc.hpp"
#include "textspot/polygon.hpp"

namespace textspot::harness {

template <typename T>
SpotResult decode_predictions(const diff::Tape<T>& tape,
                              const net::DecoderLayerOutput<T>& final_layer,
                              int n_queries, int n_points,
                              const data::GlyphSet& glyphs,
                              const InferenceConfig& cfg) {
  const int K = n_queries, N = n_points;
  const auto inst = tape.value(final_layer.inst_logits);
  const auto chars = tape.value(final_layer.char_logits);
  const auto center = tape.value(final_layer.center);
  const auto top = tape.value(final_layer.top);
  const auto bot = tape.value(final_layer.bot);
  const int V1 = tape.shape(final_layer.char_logits).back();

  SpotResult out;
  for (int k = 0; k < K; ++k) {
    double conf = 0.0;
    for (int n = 0; n < N; ++n) {
      conf += 1.0 / (1.0 + std::exp(-static_cast<double>(inst[k * N + n])));
    }
    conf /= N;
    if (conf < cfg.threshold) continue;

    SpotInstance si;
    si.confidence = conf;
    const auto decoded = match::ctc_greedy_decode(
        chars.data() + static_cast<size_t>(k) * N * V1, N, V1);
    si.transcript = glyphs.decode(decoded);
    si.polyline.resize(N);
    for (int n = 0; n < N; ++n) {
      si.polyline[n] = {static_cast<double>(center[(k * N + n) * 2]),
                        static_cast<double>(center[(k * N + n) * 2 + 1])};
    }
    if (!cfg.line_mode) {
      std::vector<geom::Point2> tps(N), bps(N);
      for (int n = 0; n < N; ++n) {
        tps[n] = {static_cast<double>(top[(k * N + n) * 2]),
                  static_cast<double>(top[(k * N + n) * 2 + 1])};
        bps[n] = {static_cast<double>(bot[(k * N + n) * 2]),
                  static_cast<double>(bot[(k * N + n) * 2 + 1])};
      }
      si.polygon = geom::polygon_from_boundary(tps, bps);
      si.valid_polygon = !geom::is_self_intersecting(si.polygon);
    }
    out.instances.push_back(std::move(si));
  }
  return out;
}

void write_overlay_svg(const std::string& path, const SpotResult& result,
                       int width, int height) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("write_overlay_svg: cannot open " + path);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
     << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " " << height
     << "\">\n";
  for (const SpotInstance& inst : result.instances) {
    const auto& pts = inst.polygon.empty() ? inst.polyline : inst.polygon;
    if (pts.empty()) continue;
    os << "  <path d=\"M";
    for (size_t i = 0; i < pts.size(); ++i) {
      os << (i ? " L" : "") << pts[i].x * width << " " << pts[i].y * height;
    }
    if (!inst.polygon.empty()) os << " Z";
    os << "\" fill=\"none\" stroke=\"" << (inst.valid_polygon ? "#00b050" : "#d04000")
       << "\" stroke-width=\"1\"/>\n";
    const geom::Point2 anchor = pts.front();
    os << "  <text x=\"" << anchor.x * width << "\" y=\"" << anchor.y * height - 2
       << "\" font-size=\"6\" fill=\"#0050d0\">" << inst.transcript << " ("
       << static_cast<int>(inst.confidence * 100) << "%)</text>\n";
  }
  os << "</svg>\n";
}

nlohmann::json spot_result_to_json(const SpotResult& result) {
  nlohmann::json insts = nlohmann::json::array();
  for (const SpotInstance& inst : result.instances) {
    nlohmann::json j;
    j["transcript"] = inst.transcript;
    j["confidence"] = inst.confidence;
    j["valid_polygon"] = inst.valid_polygon;
    nlohmann::json poly = nlohmann::json::array();
    for (const auto& p : inst.polygon) poly.push_back({p.x, p.y});
    j["polygon"] = std::move(poly);
    nlohmann::json line = nlohmann::json::array();
    for (const auto& p : inst.polyline) line.push_back({p.x, p.y});
    j["polyline"] = std::move(line);
    insts.push_back(std::move(j));
  }
  return nlohmann::json{{"instances", std::move(insts)}};
}

template SpotResult decode_predictions<float>(const diff::Tape<float>&,
                                              const net::DecoderLayerOutput<float>&,
                                              int, int, const data::GlyphSet&,
                                              const InferenceConfig&);
template SpotResult decode_predictions<double>(const diff::Tape<double>&,
                                               const net::DecoderLayerOutput<double>&,
                                               int, int, const data::GlyphSet&,
                                               const InferenceConfig&);

}  // namespace textspot::harness
