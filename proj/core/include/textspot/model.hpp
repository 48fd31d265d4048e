#pragma once

#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "textspot/geometry.hpp"
#include "textspot/image.hpp"
#include "textspot/nn.hpp"

namespace textspot::net {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ModelConfig {
  int d_model = 256;
  int n_heads = 8;
  int n_sample_points = 4;  // deformable sampling points per head per level
  int n_enc_layers = 6;
  int n_dec_layers = 6;
  int num_proposals = 100;  // K
  int n_curve_points = 25;  // N
  int n_levels = 3;         // feature pyramid levels (strides 8/16/32[/64])
  int vocab_size = 37;      // glyph classes; characters use ids 1..vocab
  int ffn_dim = 1024;
  double score_prior = 0.05;  // initial text probability for score biases
  bool aux_loss = true;       // supervise every decoder layer
  bool share_heads = true;    // one prediction head set across decoder layers

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

/// Tokens of all pyramid levels concatenated into one [P, d] matrix plus the
/// per-level layout and the normalized center coordinate of every token.
template <typename T>
struct PyramidVars {
  Var<T> tokens;                       // [P, d]
  Var<T> coords;                       // [P, 2] constant
  std::vector<diff::LevelSpec> levels;
  std::vector<int> level_of;           // token row -> level index
  int total = 0;
};

template <typename T>
struct ProposalOutput {
  Var<T> ctrl;    // [P, 8] Bezier control points of every pixel (normalized)
  Var<T> scores;  // [P] text/not-text logits
  std::vector<int> top_rows;               // selected pixel rows, score desc
  std::vector<geom::CubicBezier> curves;   // detached top-K curves
  std::vector<double> top_scores;          // sigmoid scores, descending
};

template <typename T>
struct DecoderLayerOutput {
  Var<T> inst_logits;  // [K*N]
  Var<T> char_logits;  // [K*N, vocab+1]
  Var<T> center;       // [K*N, 2]
  Var<T> top;          // [K*N, 2]
  Var<T> bot;          // [K*N, 2]
};

template <typename T>
struct ModelOutput {
  PyramidVars<T> memory;
  ProposalOutput<T> proposals;
  std::vector<DecoderLayerOutput<T>> layers;
};

template <typename T>
class SpotterModel {
 public:
  SpotterModel(const ModelConfig& cfg, diff::ParameterStore<T>& ps, Rng& rng);

  const ModelConfig& config() const { return cfg_; }

  /// Full pipeline: stem, encoder, proposals, decoder with heads after every
  /// layer. valid_x/valid_y restrict proposal selection to the unpadded
  /// region of letterboxed inputs.
  ModelOutput<T> forward(Tape<T>& tp, const data::Image& image,
                         double valid_x = 1.0, double valid_y = 1.0) const;

  // Pipeline stages, exposed for tests and partial runs.
  PyramidVars<T> stem_forward(Tape<T>& tp, const data::Image& image) const;
  PyramidVars<T> encoder_forward(Tape<T>& tp, PyramidVars<T> pyr) const;
  ProposalOutput<T> propose(Tape<T>& tp, const PyramidVars<T>& memory,
                            double valid_x = 1.0, double valid_y = 1.0) const;
  std::vector<DecoderLayerOutput<T>> run_decoder(
      Tape<T>& tp, const PyramidVars<T>& memory,
      const std::vector<geom::CubicBezier>& proposals) const;

  /// Decoder entry point on an externally built memory; used by shape and
  /// gradient tests that bypass the stem.
  PyramidVars<T> wrap_memory(Tape<T>& tp, Var<T> tokens,
                             const std::vector<diff::LevelSpec>& levels) const;

 private:
  struct EncLayer {
    Linear<T> off, aw, v, out;
    Mlp<T> ffn;
    LayerNorm<T> ln1, ln2;
  };
  struct DecLayer {
    MultiHeadAttention<T> intra, inter;
    Linear<T> cross_off, cross_aw, cross_v, cross_out;
    Mlp<T> ffn;
    LayerNorm<T> ln1, ln2, ln3, ln4;
  };
  struct Heads {
    Linear<T> instance;
    Linear<T> chars;
    Mlp<T> coord;  // shared with the iterative coordinate refinement
    Mlp<T> boundary;
  };

  Var<T> deformable_attend(Tape<T>& tp, Var<T> queries, Var<T> ref_tiled,
                           const PyramidVars<T>& memory, const Linear<T>& off,
                           const Linear<T>& aw, const Linear<T>& v,
                           const Linear<T>& out) const;
  Var<T> positional_query(Tape<T>& tp, Var<T> coords) const;
  const Heads& heads_for_layer(int layer) const {
    return heads_[cfg_.share_heads ? 0 : layer];
  }

  ModelConfig cfg_;
  // stem
  Conv2d<T> stem1_, stem2_, stem3_;
  std::vector<Conv2d<T>> stem_down_;  // stride-2 between levels
  std::vector<Conv2d<T>> stem_proj_;  // 1x1 per level
  diff::Parameter<T>* level_embed_ = nullptr;  // [n_levels, d]
  // encoder
  std::vector<EncLayer> enc_;
  // proposals
  Mlp<T> prop_offsets_;
  Linear<T> prop_score_;
  // decoder
  Mlp<T> pe_proj_;                       // Eq.-2 style 2-layer MLP on PE
  diff::Parameter<T>* content_ = nullptr;  // [N, d] point content queries
  std::vector<DecLayer> dec_;
  std::vector<Heads> heads_;
};

/// Normalized [H,W,3] tensor from an 8-bit image: x/255 - 0.5.
template <typename T>
std::vector<T> image_to_tensor(const data::Image& img);

}  // namespace textspot::net
