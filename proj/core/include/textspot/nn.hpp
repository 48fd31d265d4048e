#pragma once

#include <string>
#include <vector>

#include "textspot/params.hpp"

namespace textspot::net {

using diff::Tape;
using diff::Var;

template <typename T>
struct Linear {
  diff::Parameter<T>* w = nullptr;  // [in, out]
  diff::Parameter<T>* b = nullptr;  // [out]

  Linear() = default;
  Linear(diff::ParameterStore<T>& ps, const std::string& name, int in, int out,
         Rng& rng, bool zero_init = false) {
    w = &ps.create(name + ".w", {in, out});
    b = &ps.create(name + ".b", {out});
    if (!zero_init) diff::fill_kaiming_uniform(*w, in, rng);
  }

  Var<T> forward(Tape<T>& tp, Var<T> x) const {
    return tp.add(tp.matmul(x, tp.param(*w)), tp.param(*b));
  }
};

/// Stack of linear layers with ReLU between them (none after the last).
template <typename T>
struct Mlp {
  std::vector<Linear<T>> layers;

  Mlp() = default;
  Mlp(diff::ParameterStore<T>& ps, const std::string& name,
      const std::vector<int>& dims, Rng& rng, bool zero_last = false) {
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
      const bool last = i + 2 == dims.size();
      layers.emplace_back(ps, name + "." + std::to_string(i), dims[i], dims[i + 1],
                          rng, zero_last && last);
    }
  }

  Var<T> forward(Tape<T>& tp, Var<T> x) const {
    for (size_t i = 0; i < layers.size(); ++i) {
      x = layers[i].forward(tp, x);
      if (i + 1 < layers.size()) x = tp.relu(x);
    }
    return x;
  }
};

template <typename T>
struct LayerNorm {
  diff::Parameter<T>* gamma = nullptr;
  diff::Parameter<T>* beta = nullptr;

  LayerNorm() = default;
  LayerNorm(diff::ParameterStore<T>& ps, const std::string& name, int dim) {
    gamma = &ps.create(name + ".g", {dim});
    beta = &ps.create(name + ".b", {dim});
    diff::fill_constant(*gamma, T(1));
  }

  Var<T> forward(Tape<T>& tp, Var<T> x) const {
    return tp.layer_norm(x, tp.param(*gamma), tp.param(*beta));
  }
};

template <typename T>
struct Conv2d {
  diff::Parameter<T>* w = nullptr;  // [kh, kw, ci, co]
  diff::Parameter<T>* b = nullptr;  // [co]
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(diff::ParameterStore<T>& ps, const std::string& name, int kh, int kw,
         int ci, int co, int stride_, int pad_, Rng& rng)
      : stride(stride_), pad(pad_) {
    w = &ps.create(name + ".w", {kh, kw, ci, co});
    b = &ps.create(name + ".b", {co});
    diff::fill_kaiming_uniform(*w, kh * kw * ci, rng);
  }

  Var<T> forward(Tape<T>& tp, Var<T> x) const {
    return tp.add(tp.conv2d(x, tp.param(*w), stride, pad), tp.param(*b));
  }
};

/// Standard multi-head attention over groups of contiguous rows. Queries,
/// keys and values arrive as [groups*len, d] with group-major rows; attention
/// runs independently inside each group.
template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  int heads = 1;

  MultiHeadAttention() = default;
  MultiHeadAttention(diff::ParameterStore<T>& ps, const std::string& name, int d,
                     int heads_, Rng& rng)
      : q(ps, name + ".q", d, d, rng),
        k(ps, name + ".k", d, d, rng),
        v(ps, name + ".v", d, d, rng),
        o(ps, name + ".o", d, d, rng),
        heads(heads_) {}

  Var<T> forward_grouped(Tape<T>& tp, Var<T> q_in, Var<T> k_in, Var<T> v_in,
                         int groups, int len_q, int len_k) const {
    const int d = tp.shape(q_in).back();
    const int hd = d / heads;
    const auto split = [&](Var<T> x, int len) {
      // [G*len, d] -> [G*H, len, hd]
      x = tp.reshape(x, {groups, len, heads, hd});
      x = tp.permute(x, {0, 2, 1, 3});
      return tp.reshape(x, {groups * heads, len, hd});
    };
    Var<T> qh = split(q.forward(tp, q_in), len_q);
    Var<T> kh = split(k.forward(tp, k_in), len_k);
    Var<T> vh = split(v.forward(tp, v_in), len_k);
    Var<T> scores = tp.scale(tp.bmm_nt(qh, kh), T(1) / std::sqrt(static_cast<T>(hd)));
    Var<T> attn = tp.softmax(scores);
    Var<T> ctx = tp.bmm(attn, vh);  // [G*H, len_q, hd]
    ctx = tp.reshape(ctx, {groups, heads, len_q, hd});
    ctx = tp.permute(ctx, {0, 2, 1, 3});
    ctx = tp.reshape(ctx, {groups * len_q, d});
    return o.forward(tp, ctx);
  }
};

}  // namespace textspot::net
