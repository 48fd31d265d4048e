#include "textspot/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

namespace textspot::harness {

namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
  model.validate();
  if (iterations < 0 || batch_size < 1 || input_size < 8) {
    throw TrainError("RunConfig: iterations >= 0, batch_size >= 1, input_size >= 8");
  }
  if (precision != "f32" && precision != "f64") {
    throw TrainError("RunConfig: precision must be f32 or f64");
  }
  if (!(lr > 0.0)) throw TrainError("RunConfig: lr must be positive");
  if (!annotations.empty() && !fs::exists(annotations)) {
    throw TrainError("RunConfig: annotations file not found: " + annotations);
  }
  if (!init_checkpoint.empty() && !fs::exists(init_checkpoint)) {
    throw TrainError("RunConfig: init checkpoint not found: " + init_checkpoint);
  }
  if (line_shift < 0 || line_shift > 1 || line_shrink < 0 || line_shrink > 1) {
    throw TrainError("RunConfig: line_shift/line_shrink must lie in [0,1]");
  }
}

json RunConfig::to_json() const {
  json j;
  j["model"] = model.to_json();
  j["loss"] = {{"lambda_cls", loss.lambda_cls},
               {"lambda_coord", loss.lambda_coord},
               {"lambda_bd", loss.lambda_bd},
               {"lambda_text", loss.lambda_text},
               {"focal_alpha", loss.focal_alpha},
               {"focal_gamma", loss.focal_gamma}};
  j["data"] = {{"annotations", annotations},
               {"num_scenes", num_scenes},
               {"seed", data_seed},
               {"generator",
                {{"canvas", generator.canvas},
                 {"min_instances", generator.min_instances},
                 {"max_instances", generator.max_instances},
                 {"min_len", generator.min_len},
                 {"max_len", generator.max_len},
                 {"min_height", generator.min_height},
                 {"max_height", generator.max_height}}}};
  j["seed"] = seed;
  j["iterations"] = iterations;
  j["batch_size"] = batch_size;
  j["lr"] = lr;
  j["backbone_lr_mult"] = backbone_lr_mult;
  j["weight_decay"] = weight_decay;
  j["input_size"] = input_size;
  j["out_dir"] = out_dir;
  j["checkpoint_cadence"] = checkpoint_cadence;
  j["eval_cadence"] = eval_cadence;
  j["init_checkpoint"] = init_checkpoint;
  j["score_threshold"] = score_threshold;
  j["line_mode"] = line_mode;
  j["line_shift"] = line_shift;
  j["line_shrink"] = line_shrink;
  j["precision"] = precision;
  j["augment"] = {{"enabled", augment_enabled},
                  {"rotate", augment.rotate},
                  {"max_angle_deg", augment.max_angle_deg},
                  {"crop", augment.crop},
                  {"resize", augment.resize},
                  {"min_scale", augment.min_scale},
                  {"max_scale", augment.max_scale},
                  {"color", augment.color}};
  j["debug_checks"] = debug_checks;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  if (j.contains("model")) c.model = net::ModelConfig::from_json(j["model"]);
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    c.loss.lambda_cls = l.value("lambda_cls", c.loss.lambda_cls);
    c.loss.lambda_coord = l.value("lambda_coord", c.loss.lambda_coord);
    c.loss.lambda_bd = l.value("lambda_bd", c.loss.lambda_bd);
    c.loss.lambda_text = l.value("lambda_text", c.loss.lambda_text);
    c.loss.focal_alpha = l.value("focal_alpha", c.loss.focal_alpha);
    c.loss.focal_gamma = l.value("focal_gamma", c.loss.focal_gamma);
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    c.annotations = d.value("annotations", c.annotations);
    c.num_scenes = d.value("num_scenes", c.num_scenes);
    c.data_seed = d.value("seed", c.data_seed);
    if (d.contains("generator")) {
      const auto& g = d["generator"];
      c.generator.canvas = g.value("canvas", c.generator.canvas);
      c.generator.min_instances = g.value("min_instances", c.generator.min_instances);
      c.generator.max_instances = g.value("max_instances", c.generator.max_instances);
      c.generator.min_len = g.value("min_len", c.generator.min_len);
      c.generator.max_len = g.value("max_len", c.generator.max_len);
      c.generator.min_height = g.value("min_height", c.generator.min_height);
      c.generator.max_height = g.value("max_height", c.generator.max_height);
    }
  }
  c.seed = j.value("seed", c.seed);
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.lr = j.value("lr", c.lr);
  c.backbone_lr_mult = j.value("backbone_lr_mult", c.backbone_lr_mult);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.input_size = j.value("input_size", c.input_size);
  c.out_dir = j.value("out_dir", c.out_dir);
  c.checkpoint_cadence = j.value("checkpoint_cadence", c.checkpoint_cadence);
  c.eval_cadence = j.value("eval_cadence", c.eval_cadence);
  c.init_checkpoint = j.value("init_checkpoint", c.init_checkpoint);
  c.score_threshold = j.value("score_threshold", c.score_threshold);
  c.line_mode = j.value("line_mode", c.line_mode);
  c.line_shift = j.value("line_shift", c.line_shift);
  c.line_shrink = j.value("line_shrink", c.line_shrink);
  c.precision = j.value("precision", c.precision);
  if (j.contains("augment")) {
    const auto& a = j["augment"];
    c.augment_enabled = a.value("enabled", c.augment_enabled);
    c.augment.rotate = a.value("rotate", c.augment.rotate);
    c.augment.max_angle_deg = a.value("max_angle_deg", c.augment.max_angle_deg);
    c.augment.crop = a.value("crop", c.augment.crop);
    c.augment.resize = a.value("resize", c.augment.resize);
    c.augment.min_scale = a.value("min_scale", c.augment.min_scale);
    c.augment.max_scale = a.value("max_scale", c.augment.max_scale);
    c.augment.color = a.value("color", c.augment.color);
  }
  c.debug_checks = j.value("debug_checks", c.debug_checks);
  c.validate();
  return c;
}

RunConfig RunConfig::from_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw TrainError("RunConfig: cannot open " + path);
  json j;
  is >> j;
  return from_json(j);
}

data::Dataset build_dataset(const RunConfig& cfg, bool apply_line_mode) {
  const auto& glyphs = data::GlyphSet::toy12();
  data::Dataset ds;
  if (!cfg.annotations.empty()) {
    ds = data::load_dataset(cfg.annotations, glyphs, cfg.model.n_curve_points);
  } else {
    ds.scenes = data::generate_scenes(cfg.num_scenes, cfg.data_seed, cfg.generator,
                                      glyphs, cfg.model.n_curve_points);
  }
  if (apply_line_mode && cfg.line_mode) {
    const Rng root(cfg.data_seed);
    for (size_t si = 0; si < ds.scenes.size(); ++si) {
      auto& scene = ds.scenes[si];
      for (size_t gi = 0; gi < scene.gts.size(); ++gi) {
        auto& gt = scene.gts[gi];
        if (gt.has_boundary()) {
          Rng rng = root.fork("perturb", si * 1024 + gi);
          gt.center = geom::perturb_line(gt, cfg.line_shift, cfg.line_shrink, rng);
        } else if (cfg.line_shift != 0.0 || cfg.line_shrink != 0.0) {
          throw TrainError("build_dataset: cannot perturb line-only annotations");
        }
        gt.top.clear();
        gt.bot.clear();
      }
    }
  }
  return ds;
}

namespace {

std::vector<match::GtInstance> to_match_gts(const std::vector<geom::TextInstanceGT>& gts,
                                            const data::GlyphSet& glyphs) {
  std::vector<match::GtInstance> out;
  out.reserve(gts.size());
  for (const auto& gt : gts) {
    match::GtInstance m;
    m.label = glyphs.encode(gt.transcript);
    m.center = gt.center;
    m.top = gt.top;
    m.bot = gt.bot;
    out.push_back(std::move(m));
  }
  return out;
}

template <typename T>
TrainResult train_impl(const RunConfig& cfg) {
  const auto& glyphs = data::GlyphSet::toy12();
  if (cfg.model.vocab_size != glyphs.size()) {
    throw TrainError("train: model vocab_size " + std::to_string(cfg.model.vocab_size) +
                     " does not match the glyph set (" + std::to_string(glyphs.size()) + ")");
  }
  fs::create_directories(cfg.out_dir);
  {
    std::ofstream os(fs::path(cfg.out_dir) / "config.json", std::ios::trunc);
    os << cfg.to_json().dump(2) << "\n";
  }
  data::Dataset ds = build_dataset(cfg, /*apply_line_mode=*/true);
  const int n_scenes = static_cast<int>(ds.scenes.size());
  if (n_scenes == 0) throw TrainError("train: empty dataset");

  diff::ParameterStore<T> store;
  Rng model_rng(cfg.seed);
  net::SpotterModel<T> model(cfg.model, store, model_rng);
  if (!cfg.init_checkpoint.empty()) {
    diff::load_checkpoint(store, cfg.init_checkpoint);
    for (auto& p : store.all()) {  // warm start, fresh optimizer state
      p->m.clear();
      p->v.clear();
    }
  }
  for (auto& p : store.all()) {
    if (p->name.rfind("stem.", 0) == 0) p->lr_mult = cfg.backbone_lr_mult;
  }
  diff::AdamW<T> opt({cfg.lr, 0.9, 0.999, 1e-8, cfg.weight_decay});

  const json meta = {{"model", cfg.model.to_json()},
                     {"vocab", glyphs.chars()},
                     {"input_size", cfg.input_size},
                     {"line_mode", cfg.line_mode},
                     {"score_threshold", cfg.score_threshold}};
  const std::string final_path = (fs::path(cfg.out_dir) / "checkpoint.bin").string();

  std::ofstream metrics(fs::path(cfg.out_dir) / "metrics.jsonl", std::ios::trunc);
  TrainResult result;
  result.checkpoint_path = final_path;

  Rng order_rng = Rng(cfg.seed).fork("order");
  Rng aug_rng = Rng(cfg.seed).fork("augment");
  std::vector<int> order(n_scenes);
  std::iota(order.begin(), order.end(), 0);
  int cursor = n_scenes;  // forces a shuffle on first use

  const bool use_boundary = !cfg.line_mode;
  const int n_layers = cfg.model.n_dec_layers;

  for (int step = 1; step <= cfg.iterations; ++step) {
    std::vector<int> batch(cfg.batch_size);
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor >= n_scenes) {
        for (int i = n_scenes - 1; i > 0; --i) {
          std::swap(order[i], order[order_rng.uniform_int(0, i)]);
        }
        cursor = 0;
      }
      batch[b] = order[cursor++];
    }
    auto items = data::make_batch(ds, batch, cfg.input_size, cfg.input_size);

    StepLog log;
    log.step = step;
    store.zero_grad();
    for (auto& item : items) {
      if (cfg.augment_enabled) {
        data::AugmentPolicy pol = cfg.augment;
        if (cfg.line_mode) pol.crop = false;  // crop needs box information
        data::augment(item.image, item.gts, aug_rng, pol);
      }
      const auto gts = to_match_gts(item.gts, glyphs);
      diff::Tape<T> tape(cfg.debug_checks);
      try {
        auto out = model.forward(tape, item.image, item.valid_x, item.valid_y);
        diff::Var<T> total;
        const int first_layer = cfg.model.aux_loss ? 0 : n_layers - 1;
        for (int li = first_layer; li < n_layers; ++li) {
          match::DecoderLayerVars<T> vars{out.layers[li].inst_logits,
                                          out.layers[li].char_logits,
                                          out.layers[li].center, out.layers[li].top,
                                          out.layers[li].bot};
          auto ll = match::decoder_layer_loss(tape, vars, gts, cfg.loss,
                                              cfg.model.num_proposals,
                                              cfg.model.n_curve_points, use_boundary);
          total = total.valid() ? tape.add(total, ll.loss) : ll.loss;
          log.l_cls += ll.parts.cls;
          log.l_text += ll.parts.text;
          log.l_coord += ll.parts.coord;
          log.l_bd += ll.parts.bd;
        }
        auto el = match::encoder_loss(tape, out.proposals.scores, out.proposals.ctrl,
                                      gts, cfg.loss, cfg.model.n_curve_points);
        total = tape.add(total, el.loss);
        log.l_enc += static_cast<double>(tape.value(el.loss)[0]);
        total = tape.scale(total, T(1) / static_cast<T>(cfg.batch_size));
        const double tv = static_cast<double>(tape.value(total)[0]);
        if (!std::isfinite(tv)) throw diff::NonFiniteError("total loss is not finite");
        log.total += tv;
        tape.backward(total);
      } catch (const diff::NonFiniteError& e) {
        json dump = {{"step", step},
                     {"batch", batch},
                     {"error", e.what()},
                     {"seed", cfg.seed},
                     {"data_seed", cfg.data_seed}};
        std::ofstream os(fs::path(cfg.out_dir) / "nan_dump.json", std::ios::trunc);
        os << dump.dump(2) << "\n";
        throw TrainError(std::string("train: non-finite loss at step ") +
                         std::to_string(step) + " (" + e.what() + "); batch dumped");
      }
    }
    const double inv_b = 1.0 / cfg.batch_size;
    log.l_cls *= inv_b;
    log.l_text *= inv_b;
    log.l_coord *= inv_b;
    log.l_bd *= inv_b;
    log.l_enc *= inv_b;
    opt.step(store);

    metrics << json{{"step", log.step},     {"l_cls", log.l_cls},
                    {"l_text", log.l_text}, {"l_coord", log.l_coord},
                    {"l_bd", log.l_bd},     {"l_enc", log.l_enc},
                    {"total", log.total}}
                   .dump()
            << "\n";
    result.logs.push_back(log);

    if (cfg.checkpoint_cadence > 0 && step % cfg.checkpoint_cadence == 0) {
      const std::string path =
          (fs::path(cfg.out_dir) / ("checkpoint_" + std::to_string(step) + ".bin")).string();
      diff::save_checkpoint(store, path, step, meta);
    }
    if (cfg.eval_cadence > 0 && step % cfg.eval_cadence == 0) {
      InferenceConfig icfg{cfg.score_threshold, cfg.line_mode};
      const auto preds = spot_dataset(model, ds, cfg.input_size, glyphs, icfg);
      const auto gts = batched_gts(ds, cfg.input_size);
      double quality = 0.0;
      if (cfg.line_mode) {
        data::Dataset full = build_dataset(cfg, /*apply_line_mode=*/false);
        quality = eval_line_protocol(preds, batched_gts(full, cfg.input_size));
      } else {
        quality = eval_detection(preds, gts).f1;
      }
      metrics << json{{"step", step}, {"eval", quality}}.dump() << "\n";
    }
  }
  diff::save_checkpoint(store, final_path, cfg.iterations, meta);
  return result;
}

}  // namespace

TrainResult train(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.precision == "f64") return train_impl<double>(cfg);
  return train_impl<float>(cfg);
}

template <typename T>
std::vector<SpotResult> spot_dataset(const net::SpotterModel<T>& model,
                                     const data::Dataset& ds, int input_size,
                                     const data::GlyphSet& glyphs,
                                     const InferenceConfig& icfg) {
  std::vector<SpotResult> out;
  out.reserve(ds.scenes.size());
  for (int i = 0; i < static_cast<int>(ds.scenes.size()); ++i) {
    const int idx[1] = {i};
    const auto items = data::make_batch(ds, idx, input_size, input_size);
    diff::Tape<T> tape(false);
    const auto mo = model.forward(tape, items[0].image, items[0].valid_x,
                                  items[0].valid_y);
    out.push_back(decode_predictions(tape, mo.layers.back(),
                                     model.config().num_proposals,
                                     model.config().n_curve_points, glyphs, icfg));
  }
  return out;
}

std::vector<std::vector<geom::TextInstanceGT>> batched_gts(const data::Dataset& ds,
                                                           int input_size) {
  std::vector<std::vector<geom::TextInstanceGT>> out;
  out.reserve(ds.scenes.size());
  for (int i = 0; i < static_cast<int>(ds.scenes.size()); ++i) {
    const int idx[1] = {i};
    const auto items = data::make_batch(ds, idx, input_size, input_size);
    out.push_back(items[0].gts);
  }
  return out;
}

std::vector<std::string> lexicon_from_gts(
    std::span<const std::vector<geom::TextInstanceGT>> gts) {
  std::vector<std::string> lex;
  for (const auto& image_gts : gts) {
    for (const auto& gt : image_gts) lex.push_back(casefold(gt.transcript));
  }
  std::sort(lex.begin(), lex.end());
  lex.erase(std::unique(lex.begin(), lex.end()), lex.end());
  return lex;
}

std::unique_ptr<LoadedSpotter> load_spotter(const std::string& ckpt_path) {
  const json manifest = diff::peek_checkpoint_meta(ckpt_path);
  if (!manifest.contains("meta") || !manifest["meta"].contains("model")) {
    throw TrainError("load_spotter: checkpoint lacks model metadata: " + ckpt_path);
  }
  const json& meta = manifest["meta"];
  auto ls = std::make_unique<LoadedSpotter>();
  ls->cfg = net::ModelConfig::from_json(meta["model"]);
  ls->input_size = meta.value("input_size", 96);
  const std::string vocab = meta.value("vocab", std::string());
  const auto& toy = data::GlyphSet::toy12();
  ls->glyphs = vocab == toy.chars() ? toy : data::GlyphSet::from_chars(vocab);
  Rng rng(0);
  ls->model = std::make_unique<net::SpotterModel<float>>(ls->cfg, ls->store, rng);
  const auto info = diff::load_checkpoint(ls->store, ckpt_path);
  ls->step = info.step;
  return ls;
}

std::vector<SensitivityCell> line_sensitivity(const RunConfig& base,
                                              std::span<const double> shifts,
                                              std::span<const double> shrinks,
                                              const std::string& csv_path) {
  std::vector<SensitivityCell> cells;
  std::ofstream csv(csv_path, std::ios::trunc);
  if (!csv) throw TrainError("line_sensitivity: cannot write " + csv_path);
  csv << "shift,shrink,none_f1\n";
  for (double shift : shifts) {
    for (double shrink : shrinks) {
      RunConfig cfg = base;
      cfg.line_mode = true;
      cfg.line_shift = shift;
      cfg.line_shrink = shrink;
      char cell_name[64];
      std::snprintf(cell_name, sizeof(cell_name), "cell_%.3f_%.3f", shift, shrink);
      cfg.out_dir = (fs::path(base.out_dir) / cell_name).string();
      const TrainResult tr = train(cfg);

      const auto spotter = load_spotter(tr.checkpoint_path);
      data::Dataset eval_ds = build_dataset(cfg, /*apply_line_mode=*/false);
      InferenceConfig icfg{cfg.score_threshold, /*line_mode=*/true};
      const auto preds = spot_dataset(*spotter->model, eval_ds, cfg.input_size,
                                      spotter->glyphs, icfg);
      const double f1 = eval_line_protocol(preds, batched_gts(eval_ds, cfg.input_size));
      cells.push_back({shift, shrink, f1});
      csv << shift << "," << shrink << "," << f1 << "\n";
      csv.flush();
    }
  }
  return cells;
}

template std::vector<SpotResult> spot_dataset<float>(const net::SpotterModel<float>&,
                                                     const data::Dataset&, int,
                                                     const data::GlyphSet&,
                                                     const InferenceConfig&);
template std::vector<SpotResult> spot_dataset<double>(const net::SpotterModel<double>&,
                                                      const data::Dataset&, int,
                                                      const data::GlyphSet&,
                                                      const InferenceConfig&);

}  // namespace textspot::harness
