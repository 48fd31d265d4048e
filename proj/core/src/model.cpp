#include "textspot/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

namespace textspot::net {

void ModelConfig::validate() const {
  if (d_model <= 0 || d_model % n_heads != 0) {
    throw ConfigError("ModelConfig: d_model must be a positive multiple of n_heads");
  }
  if (d_model % 4 != 0) {
    throw ConfigError("ModelConfig: d_model must be divisible by 4 for the positional encoding");
  }
  if (n_levels < 1 || n_levels > 4) {
    throw ConfigError("ModelConfig: n_levels must be in [1,4]");
  }
  if (num_proposals < 1 || n_curve_points < 2 || vocab_size < 1) {
    throw ConfigError("ModelConfig: K >= 1, N >= 2, vocab >= 1 required");
  }
  if (n_sample_points < 1 || n_enc_layers < 1 || n_dec_layers < 1 || ffn_dim < 1) {
    throw ConfigError("ModelConfig: layer sizes must be positive");
  }
  if (!(score_prior > 0.0 && score_prior < 1.0)) {
    throw ConfigError("ModelConfig: score_prior must lie in (0,1)");
  }
}

nlohmann::json ModelConfig::to_json() const {
  return {{"d_model", d_model},
          {"n_heads", n_heads},
          {"n_sample_points", n_sample_points},
          {"n_enc_layers", n_enc_layers},
          {"n_dec_layers", n_dec_layers},
          {"num_proposals", num_proposals},
          {"n_curve_points", n_curve_points},
          {"n_levels", n_levels},
          {"vocab_size", vocab_size},
          {"ffn_dim", ffn_dim},
          {"score_prior", score_prior},
          {"aux_loss", aux_loss},
          {"share_heads", share_heads}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.n_sample_points = j.value("n_sample_points", c.n_sample_points);
  c.n_enc_layers = j.value("n_enc_layers", c.n_enc_layers);
  c.n_dec_layers = j.value("n_dec_layers", c.n_dec_layers);
  c.num_proposals = j.value("num_proposals", c.num_proposals);
  c.n_curve_points = j.value("n_curve_points", c.n_curve_points);
  c.n_levels = j.value("n_levels", c.n_levels);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.ffn_dim = j.value("ffn_dim", c.ffn_dim);
  c.score_prior = j.value("score_prior", c.score_prior);
  c.aux_loss = j.value("aux_loss", c.aux_loss);
  c.share_heads = j.value("share_heads", c.share_heads);
  c.validate();
  return c;
}

namespace {

// Bias toward "not text": sigmoid(bias) == prior.
double prior_bias(double prior) { return -std::log((1.0 - prior) / prior); }

// Deformable-attention style sampling-offset bias: head directions on a
// circle, magnitude growing with the point index, so zero-initialized weights
// still sample distinct locations.
template <typename T>
void init_sampling_offsets(diff::Parameter<T>& bias, int heads, int levels, int points) {
  for (int h = 0; h < heads; ++h) {
    const double theta = 2.0 * M_PI * h / heads;
    double cx = std::cos(theta), cy = std::sin(theta);
    const double mx = std::max(std::abs(cx), std::abs(cy));
    cx /= mx;
    cy /= mx;
    for (int l = 0; l < levels; ++l) {
      for (int p = 0; p < points; ++p) {
        const int base = (((h * levels) + l) * points + p) * 2;
        bias.value[base] = static_cast<T>(cx * (p + 1));
        bias.value[base + 1] = static_cast<T>(cy * (p + 1));
      }
    }
  }
}

}  // namespace

template <typename T>
std::vector<T> image_to_tensor(const data::Image& img) {
  std::vector<T> out(img.rgb.size());
  for (size_t i = 0; i < img.rgb.size(); ++i) {
    out[i] = static_cast<T>(img.rgb[i]) / T(255) - T(0.5);
  }
  return out;
}

template <typename T>
SpotterModel<T>::SpotterModel(const ModelConfig& cfg, diff::ParameterStore<T>& ps,
                              Rng& rng_in)
    : cfg_(cfg) {
  cfg_.validate();
  Rng rng = rng_in.fork("model");
  const int d = cfg_.d_model;
  const int c1 = std::max(8, d / 4);
  const int c2 = std::max(16, d / 2);

  stem1_ = Conv2d<T>(ps, "stem.conv1", 3, 3, 3, c1, 2, 1, rng);
  stem2_ = Conv2d<T>(ps, "stem.conv2", 3, 3, c1, c2, 2, 1, rng);
  stem3_ = Conv2d<T>(ps, "stem.conv3", 3, 3, c2, d, 2, 1, rng);
  for (int l = 1; l < cfg_.n_levels; ++l) {
    stem_down_.emplace_back(ps, "stem.down" + std::to_string(l), 3, 3, d, d, 2, 1, rng);
  }
  for (int l = 0; l < cfg_.n_levels; ++l) {
    stem_proj_.emplace_back(ps, "stem.proj" + std::to_string(l), 1, 1, d, d, 1, 0, rng);
  }
  level_embed_ = &ps.create("enc.level_embed", {cfg_.n_levels, d});
  diff::fill_uniform(*level_embed_, T(-0.1), T(0.1), rng);

  const int S = cfg_.n_heads * cfg_.n_levels * cfg_.n_sample_points;
  for (int i = 0; i < cfg_.n_enc_layers; ++i) {
    const std::string p = "enc." + std::to_string(i);
    EncLayer layer;
    layer.off = Linear<T>(ps, p + ".off", d, S * 2, rng, /*zero_init=*/true);
    init_sampling_offsets(*layer.off.b, cfg_.n_heads, cfg_.n_levels, cfg_.n_sample_points);
    layer.aw = Linear<T>(ps, p + ".aw", d, S, rng, /*zero_init=*/true);
    layer.v = Linear<T>(ps, p + ".v", d, d, rng);
    layer.out = Linear<T>(ps, p + ".out", d, d, rng);
    layer.ffn = Mlp<T>(ps, p + ".ffn", {d, cfg_.ffn_dim, d}, rng);
    layer.ln1 = LayerNorm<T>(ps, p + ".ln1", d);
    layer.ln2 = LayerNorm<T>(ps, p + ".ln2", d);
    enc_.push_back(std::move(layer));
  }

  prop_offsets_ = Mlp<T>(ps, "prop.offsets", {d, d, d, 8}, rng, /*zero_last=*/true);
  prop_score_ = Linear<T>(ps, "prop.score", d, 1, rng);
  prop_score_.b->value[0] = static_cast<T>(prior_bias(cfg_.score_prior));

  pe_proj_ = Mlp<T>(ps, "dec.pe_proj", {d, d, d}, rng);
  content_ = &ps.create("dec.content", {cfg_.n_curve_points, d});
  diff::fill_uniform(*content_, static_cast<T>(-1.0 / std::sqrt(double(d))),
                     static_cast<T>(1.0 / std::sqrt(double(d))), rng);

  for (int i = 0; i < cfg_.n_dec_layers; ++i) {
    const std::string p = "dec." + std::to_string(i);
    DecLayer layer;
    layer.intra = MultiHeadAttention<T>(ps, p + ".intra", d, cfg_.n_heads, rng);
    layer.inter = MultiHeadAttention<T>(ps, p + ".inter", d, cfg_.n_heads, rng);
    layer.cross_off = Linear<T>(ps, p + ".cross.off", d, S * 2, rng, true);
    init_sampling_offsets(*layer.cross_off.b, cfg_.n_heads, cfg_.n_levels,
                          cfg_.n_sample_points);
    layer.cross_aw = Linear<T>(ps, p + ".cross.aw", d, S, rng, true);
    layer.cross_v = Linear<T>(ps, p + ".cross.v", d, d, rng);
    layer.cross_out = Linear<T>(ps, p + ".cross.out", d, d, rng);
    layer.ffn = Mlp<T>(ps, p + ".ffn", {d, cfg_.ffn_dim, d}, rng);
    layer.ln1 = LayerNorm<T>(ps, p + ".ln1", d);
    layer.ln2 = LayerNorm<T>(ps, p + ".ln2", d);
    layer.ln3 = LayerNorm<T>(ps, p + ".ln3", d);
    layer.ln4 = LayerNorm<T>(ps, p + ".ln4", d);
    dec_.push_back(std::move(layer));
  }

  const int n_head_sets = cfg_.share_heads ? 1 : cfg_.n_dec_layers;
  for (int i = 0; i < n_head_sets; ++i) {
    const std::string p = "head." + std::to_string(i);
    Heads h;
    h.instance = Linear<T>(ps, p + ".instance", d, 1, rng);
    h.instance.b->value[0] = static_cast<T>(prior_bias(cfg_.score_prior));
    h.chars = Linear<T>(ps, p + ".chars", d, cfg_.vocab_size + 1, rng);
    h.coord = Mlp<T>(ps, p + ".coord", {d, d, d, 2}, rng, /*zero_last=*/true);
    h.boundary = Mlp<T>(ps, p + ".boundary", {d, d, d, 4}, rng, /*zero_last=*/true);
    heads_.push_back(std::move(h));
  }
}

template <typename T>
PyramidVars<T> SpotterModel<T>::stem_forward(Tape<T>& tp, const data::Image& image) const {
  const int stride_max = 8 << (cfg_.n_levels - 1);
  const int hp = (image.height + stride_max - 1) / stride_max * stride_max;
  const int wp = (image.width + stride_max - 1) / stride_max * stride_max;
  std::vector<T> tensor(static_cast<size_t>(hp) * wp * 3, T(0));
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const uint8_t* s = image.px(x, y);
      T* dptr = tensor.data() + (static_cast<size_t>(y) * wp + x) * 3;
      for (int c = 0; c < 3; ++c) dptr[c] = static_cast<T>(s[c]) / T(255) - T(0.5);
    }
  }
  Var<T> x = tp.constant({hp, wp, 3}, std::move(tensor));
  x = tp.relu(stem1_.forward(tp, x));
  x = tp.relu(stem2_.forward(tp, x));
  x = tp.relu(stem3_.forward(tp, x));

  PyramidVars<T> pyr;
  std::vector<Var<T>> flat_levels;
  std::vector<T> coords;
  Var<T> cur = x;
  int start = 0;
  for (int l = 0; l < cfg_.n_levels; ++l) {
    if (l > 0) cur = tp.relu(stem_down_[l - 1].forward(tp, cur));
    Var<T> feat = stem_proj_[l].forward(tp, cur);
    const diff::Shape& fs = tp.shape(feat);
    const int h = fs[0], w = fs[1];
    flat_levels.push_back(tp.reshape(feat, {h * w, cfg_.d_model}));
    pyr.levels.push_back({h, w, start});
    for (int yy = 0; yy < h; ++yy) {
      for (int xx = 0; xx < w; ++xx) {
        coords.push_back(static_cast<T>((xx + 0.5) / w));
        coords.push_back(static_cast<T>((yy + 0.5) / h));
        pyr.level_of.push_back(l);
      }
    }
    start += h * w;
  }
  pyr.total = start;
  pyr.tokens = tp.concat(flat_levels, 0);
  pyr.coords = tp.constant({pyr.total, 2}, std::move(coords));
  return pyr;
}

template <typename T>
Var<T> SpotterModel<T>::deformable_attend(Tape<T>& tp, Var<T> queries,
                                          Var<T> ref, const PyramidVars<T>& memory,
                                          const Linear<T>& off, const Linear<T>& aw,
                                          const Linear<T>& v, const Linear<T>& out) const {
  const int Q = tp.shape(queries)[0];
  const int L = static_cast<int>(memory.levels.size());
  const int S = cfg_.n_heads * L * cfg_.n_sample_points;

  Var<T> offsets = tp.reshape(off.forward(tp, queries), {Q, S, 2});
  // Offsets are predicted in level-cell units; normalize per sampled level.
  std::vector<T> scale(static_cast<size_t>(S) * 2);
  for (int h = 0; h < cfg_.n_heads; ++h) {
    for (int l = 0; l < L; ++l) {
      for (int p = 0; p < cfg_.n_sample_points; ++p) {
        const int s = ((h * L) + l) * cfg_.n_sample_points + p;
        scale[s * 2] = T(1) / static_cast<T>(memory.levels[l].w);
        scale[s * 2 + 1] = T(1) / static_cast<T>(memory.levels[l].h);
      }
    }
  }
  offsets = tp.mul(offsets, tp.constant({S, 2}, std::move(scale)));

  std::vector<int> tile(static_cast<size_t>(Q) * S);
  for (int q = 0; q < Q; ++q) {
    std::fill(tile.begin() + static_cast<size_t>(q) * S,
              tile.begin() + static_cast<size_t>(q + 1) * S, q);
  }
  Var<T> ref_tiled = tp.reshape(tp.gather_rows(ref, std::move(tile)), {Q, S, 2});
  Var<T> loc = tp.add(offsets, ref_tiled);

  Var<T> weights = tp.reshape(aw.forward(tp, queries),
                              {Q, cfg_.n_heads, L * cfg_.n_sample_points});
  weights = tp.reshape(tp.softmax(weights), {Q, S});

  Var<T> value = v.forward(tp, memory.tokens);
  Var<T> attended = tp.ms_deform_attend(value, memory.levels, loc, weights,
                                        cfg_.n_heads, cfg_.n_sample_points);
  return out.forward(tp, attended);
}

template <typename T>
PyramidVars<T> SpotterModel<T>::encoder_forward(Tape<T>& tp, PyramidVars<T> pyr) const {
  Var<T> pe = tp.sinusoidal_encode(pyr.coords, cfg_.d_model);
  Var<T> lvl = tp.gather_rows(tp.param(*level_embed_), pyr.level_of);
  Var<T> pos = tp.add(pe, lvl);
  Var<T> src = pyr.tokens;
  for (const EncLayer& layer : enc_) {
    Var<T> q = tp.add(src, pos);
    PyramidVars<T> mem = pyr;
    mem.tokens = src;
    Var<T> attended = deformable_attend(tp, q, pyr.coords, mem, layer.off,
                                        layer.aw, layer.v, layer.out);
    src = layer.ln1.forward(tp, tp.add(src, attended));
    src = layer.ln2.forward(tp, tp.add(src, layer.ffn.forward(tp, src)));
  }
  pyr.tokens = src;
  return pyr;
}

template <typename T>
ProposalOutput<T> SpotterModel<T>::propose(Tape<T>& tp, const PyramidVars<T>& memory,
                                           double valid_x, double valid_y) const {
  const int P = memory.total;
  ProposalOutput<T> out;
  out.scores = tp.reshape(prop_score_.forward(tp, memory.tokens), {P});
  Var<T> prior = tp.logit(
      tp.concat({memory.coords, memory.coords, memory.coords, memory.coords}, 1));
  out.ctrl = tp.sigmoid(tp.add(prop_offsets_.forward(tp, memory.tokens), prior));

  const auto scores = tp.value(out.scores);
  const auto coords = tp.value(memory.coords);
  std::vector<int> candidates;
  candidates.reserve(P);
  for (int i = 0; i < P; ++i) {
    const double cx = static_cast<double>(coords[i * 2]);
    const double cy = static_cast<double>(coords[i * 2 + 1]);
    if (cx <= valid_x && cy <= valid_y) candidates.push_back(i);
  }
  if (candidates.empty()) {
    for (int i = 0; i < P; ++i) candidates.push_back(i);
  }
  const int K = cfg_.num_proposals;
  if (K > static_cast<int>(candidates.size())) {
    throw ConfigError("propose: K=" + std::to_string(K) + " exceeds " +
                      std::to_string(candidates.size()) + " candidate pixels");
  }
  // Score descending, ties toward the lower flattened (level,row,col) index.
  std::sort(candidates.begin(), candidates.end(), [&](int a, int b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  candidates.resize(K);
  out.top_rows = candidates;

  const auto ctrl = tp.value(out.ctrl);
  out.curves.resize(K);
  out.top_scores.resize(K);
  for (int k = 0; k < K; ++k) {
    const int row = candidates[k];
    const T* c = ctrl.data() + static_cast<size_t>(row) * 8;
    out.curves[k] = geom::CubicBezier{{double(c[0]), double(c[1])},
                                      {double(c[2]), double(c[3])},
                                      {double(c[4]), double(c[5])},
                                      {double(c[6]), double(c[7])}};
    out.top_scores[k] = 1.0 / (1.0 + std::exp(-static_cast<double>(scores[row])));
  }
  return out;
}

template <typename T>
Var<T> SpotterModel<T>::positional_query(Tape<T>& tp, Var<T> coords) const {
  return pe_proj_.forward(tp, tp.sinusoidal_encode(coords, cfg_.d_model));
}

template <typename T>
std::vector<DecoderLayerOutput<T>> SpotterModel<T>::run_decoder(
    Tape<T>& tp, const PyramidVars<T>& memory,
    const std::vector<geom::CubicBezier>& proposals) const {
  const int K = static_cast<int>(proposals.size());
  const int N = cfg_.n_curve_points;
  const int d = cfg_.d_model;
  const int KN = K * N;

  std::vector<T> coords0(static_cast<size_t>(KN) * 2);
  for (int k = 0; k < K; ++k) {
    const auto pts = geom::sample_uniform(proposals[k], N);
    for (int n = 0; n < N; ++n) {
      coords0[(static_cast<size_t>(k) * N + n) * 2] = static_cast<T>(pts[n].x);
      coords0[(static_cast<size_t>(k) * N + n) * 2 + 1] = static_cast<T>(pts[n].y);
    }
  }
  Var<T> coords = tp.constant({KN, 2}, std::move(coords0));

  // Unshared point content queries: the learned [N,d] table broadcast over K.
  std::vector<int> content_idx(KN);
  for (int k = 0; k < K; ++k) {
    for (int n = 0; n < N; ++n) content_idx[k * N + n] = n;
  }
  Var<T> content = tp.gather_rows(tp.param(*content_), std::move(content_idx));

  // Row permutations between (k,n)-major and (n,k)-major layouts.
  std::vector<int> to_nk(KN), to_kn(KN);
  for (int k = 0; k < K; ++k) {
    for (int n = 0; n < N; ++n) {
      to_nk[n * K + k] = k * N + n;
      to_kn[k * N + n] = n * K + k;
    }
  }

  std::vector<DecoderLayerOutput<T>> outputs;
  Var<T> c = content;
  for (int li = 0; li < cfg_.n_dec_layers; ++li) {
    const DecLayer& layer = dec_[li];
    Var<T> pq = positional_query(tp, coords);

    // Intra-group attention over the N points of each instance.
    Var<T> q1 = tp.add(c, pq);
    Var<T> a1 = layer.intra.forward_grouped(tp, q1, q1, c, K, N, N);
    c = layer.ln1.forward(tp, tp.add(c, a1));

    // Inter-group attention across the K instances at each point index.
    Var<T> q2 = tp.add(c, pq);
    Var<T> q2p = tp.gather_rows(q2, to_nk);
    Var<T> cp = tp.gather_rows(c, to_nk);
    Var<T> a2p = layer.inter.forward_grouped(tp, q2p, q2p, cp, N, K, K);
    Var<T> a2 = tp.gather_rows(a2p, to_kn);
    c = layer.ln2.forward(tp, tp.add(c, a2));

    // Deformable cross-attention into the encoder memory.
    Var<T> q3 = tp.add(c, pq);
    Var<T> a3 = deformable_attend(tp, q3, coords, memory, layer.cross_off,
                                  layer.cross_aw, layer.cross_v, layer.cross_out);
    c = layer.ln3.forward(tp, tp.add(c, a3));

    c = layer.ln4.forward(tp, tp.add(c, layer.ffn.forward(tp, c)));

    // Coordinate refinement doubles as the center-point head.
    const Heads& heads = heads_for_layer(li);
    Var<T> delta = heads.coord.forward(tp, c);
    Var<T> center = tp.sigmoid(tp.add(delta, tp.logit(coords)));

    DecoderLayerOutput<T> out;
    out.center = center;
    out.inst_logits = tp.reshape(heads.instance.forward(tp, c), {KN});
    out.char_logits = heads.chars.forward(tp, c);

    // Refined points re-enter the next layer as detached references and are
    // the base for the boundary offsets.
    const auto cv = tp.value(center);
    Var<T> refined = tp.constant({KN, 2}, std::vector<T>(cv.begin(), cv.end()));
    Var<T> bd = heads.boundary.forward(tp, c);
    out.top = tp.add(tp.slice_last(bd, 0, 2), refined);
    out.bot = tp.add(tp.slice_last(bd, 2, 4), refined);
    outputs.push_back(out);
    coords = refined;
  }
  return outputs;
}

template <typename T>
PyramidVars<T> SpotterModel<T>::wrap_memory(Tape<T>& tp, Var<T> tokens,
                                            const std::vector<diff::LevelSpec>& levels) const {
  PyramidVars<T> pyr;
  pyr.tokens = tokens;
  pyr.levels = levels;
  std::vector<T> coords;
  for (size_t l = 0; l < levels.size(); ++l) {
    for (int yy = 0; yy < levels[l].h; ++yy) {
      for (int xx = 0; xx < levels[l].w; ++xx) {
        coords.push_back(static_cast<T>((xx + 0.5) / levels[l].w));
        coords.push_back(static_cast<T>((yy + 0.5) / levels[l].h));
        pyr.level_of.push_back(static_cast<int>(l));
      }
    }
    pyr.total += levels[l].h * levels[l].w;
  }
  pyr.coords = tp.constant({pyr.total, 2}, std::move(coords));
  return pyr;
}

template <typename T>
ModelOutput<T> SpotterModel<T>::forward(Tape<T>& tp, const data::Image& image,
                                        double valid_x, double valid_y) const {
  ModelOutput<T> out;
  out.memory = encoder_forward(tp, stem_forward(tp, image));
  out.proposals = propose(tp, out.memory, valid_x, valid_y);
  out.layers = run_decoder(tp, out.memory, out.proposals.curves);
  return out;
}

template std::vector<float> image_to_tensor<float>(const data::Image&);
template std::vector<double> image_to_tensor<double>(const data::Image&);
template class SpotterModel<float>;
template class SpotterModel<double>;

}  // namespace textspot::net
