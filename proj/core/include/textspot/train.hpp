#pragma once

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "textspot/annotations.hpp"
#include "textspot/checkpoint.hpp"
#include "textspot/matching.hpp"
#include "textspot/model.hpp"
#include "textspot/spotting.hpp"

namespace textspot::harness {

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  net::ModelConfig model;
  match::LossConfig loss;

  // data: an annotation file, or the synthetic generator when empty
  std::string annotations;
  int num_scenes = 32;
  uint64_t data_seed = 7;
  data::GeneratorConfig generator;

  // optimization
  uint64_t seed = 1;
  int iterations = 1000;
  int batch_size = 4;
  double lr = 3e-4;
  double backbone_lr_mult = 0.1;  // applied to stem.* parameters
  double weight_decay = 1e-4;
  int input_size = 96;

  // io / cadence
  std::string out_dir = "run";
  int checkpoint_cadence = 0;  // 0: final checkpoint only
  int eval_cadence = 0;        // 0: never
  std::string init_checkpoint;

  // inference
  double score_threshold = 0.4;

  // line-annotation regime
  bool line_mode = false;   // train from center lines, exclude the boundary head
  double line_shift = 0.0;  // label-noise controls for sensitivity studies
  double line_shrink = 0.0;

  std::string precision = "f32";  // f32 | f64
  bool augment_enabled = false;
  data::AugmentPolicy augment;
  bool debug_checks = false;  // per-op finite checks on the tape

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig from_json_file(const std::string& path);
};

struct StepLog {
  int step = 0;
  double l_cls = 0, l_text = 0, l_coord = 0, l_bd = 0, l_enc = 0, total = 0;
};

struct TrainResult {
  std::string checkpoint_path;
  std::vector<StepLog> logs;
};

/// AdamW training loop. Deterministic given the config; per-component losses
/// go to <out_dir>/metrics.jsonl as JSON lines. A non-finite loss aborts with
/// a diagnostic dump of the offending batch.
TrainResult train(const RunConfig& cfg);

/// Builds the training/eval dataset exactly as train() sees it (generator or
/// annotation file; line-mode label conversion applied).
data::Dataset build_dataset(const RunConfig& cfg, bool apply_line_mode);

/// Inference over a dataset; images are letterboxed to input_size.
template <typename T>
std::vector<SpotResult> spot_dataset(const net::SpotterModel<T>& model,
                                     const data::Dataset& ds, int input_size,
                                     const data::GlyphSet& glyphs,
                                     const InferenceConfig& icfg);

/// Ground truths renormalized to the same letterboxed canvas as spot_dataset.
std::vector<std::vector<geom::TextInstanceGT>> batched_gts(const data::Dataset& ds,
                                                           int input_size);

/// All distinct ground-truth transcripts, the "Full" lexicon of the paper.
std::vector<std::string> lexicon_from_gts(
    std::span<const std::vector<geom::TextInstanceGT>> gts);

/// A checkpoint plus everything needed to run it (f32).
struct LoadedSpotter {
  diff::ParameterStore<float> store;
  std::unique_ptr<net::SpotterModel<float>> model;
  net::ModelConfig cfg;
  data::GlyphSet glyphs = data::GlyphSet::from_chars("");
  int input_size = 96;
  int64_t step = 0;
};
std::unique_ptr<LoadedSpotter> load_spotter(const std::string& ckpt_path);

struct SensitivityCell {
  double shift = 0.0;
  double shrink = 0.0;
  double none_f1 = 0.0;
};

/// Fine-tunes in line mode on perturbed labels for every (shift, shrink)
/// cell, evaluates with the line protocol against the unperturbed polygons
/// and writes "shift,shrink,none_f1" rows to csv_path.
std::vector<SensitivityCell> line_sensitivity(const RunConfig& base,
                                              std::span<const double> shifts,
                                              std::span<const double> shrinks,
                                              const std::string& csv_path);

}  // namespace textspot::harness
