#include "textspot/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "textspot/params.hpp"

namespace textspot::diff {

int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace {

constexpr double kTwoPi = 6.283185307179586476925287;

// [outer, axis_dim, inner] factorization for axis-wise ops.
struct AxisSplit {
  int64_t outer = 1, dim = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
  AxisSplit a;
  for (int i = 0; i < axis; ++i) a.outer *= s[i];
  a.dim = s[axis];
  for (size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}

}  // namespace

template <typename T>
void Tape<T>::require(bool cond, const char* op, const std::string& detail) const {
  if (!cond) {
    std::ostringstream os;
    os << op << ": " << detail;
    throw ShapeError(os.str());
  }
}

template <typename T>
Var<T> Tape<T>::push(const char* op, Shape shape, std::vector<T> val,
                     std::function<void()> back) {
  if (numel(shape) != static_cast<int64_t>(val.size())) {
    std::ostringstream os;
    os << op << ": value size " << val.size() << " does not match shape "
       << shape_str(shape);
    throw ShapeError(os.str());
  }
  if (check_finite_) {
    for (const T& x : val) {
      if (!std::isfinite(static_cast<double>(x))) {
        std::ostringstream os;
        os << op << ": non-finite value produced (shape " << shape_str(shape) << ")";
        throw NonFiniteError(os.str());
      }
    }
  }
  Node n;
  n.shape = std::move(shape);
  n.grad.assign(val.size(), T(0));
  n.val = std::move(val);
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var<T>{static_cast<int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var<T> Tape<T>::leaf(Shape shape, std::vector<T> values) {
  return push("leaf", std::move(shape), std::move(values), nullptr);
}

template <typename T>
Var<T> Tape<T>::zeros(Shape shape) {
  std::vector<T> v(numel(shape), T(0));
  return push("zeros", std::move(shape), std::move(v), nullptr);
}

template <typename T>
Var<T> Tape<T>::param(Parameter<T>& p) {
  Var<T> out = push("param", p.shape, p.value, nullptr);
  nodes_[out.id].bound = &p;
  return out;
}

// --------------------------------------------------------------- elementwise

template <typename T>
Var<T> Tape<T>::add(Var<T> a, Var<T> b) {
  const Shape sa = shape(a);
  const Shape sb = shape(b);
  const int64_t na = size(a), nb = size(b);
  const bool same = sa == sb;
  const bool suffix = !same && sb.size() <= sa.size() && nb > 0 &&
                      std::equal(sb.begin(), sb.end(), sa.end() - sb.size());
  require(same || suffix, "add",
          "shapes " + shape_str(sa) + " and " + shape_str(sb) + " incompatible");
  std::vector<T> out(na);
  const T* pa = nodes_[a.id].val.data();
  const T* pb = nodes_[b.id].val.data();
  for (int64_t i = 0; i < na; ++i) out[i] = pa[i] + pb[i % nb];
  Var<T> o = push("add", sa, std::move(out), nullptr);
  nodes_[o.id].back = [this, a, b, o, na, nb] {
    const T* go = nodes_[o.id].grad.data();
    T* ga = nodes_[a.id].grad.data();
    T* gb = nodes_[b.id].grad.data();
    for (int64_t i = 0; i < na; ++i) {
      ga[i] += go[i];
      gb[i % nb] += go[i];
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::sub(Var<T> a, Var<T> b) {
  const Shape sa = shape(a);
  const Shape sb = shape(b);
  const int64_t na = size(a), nb = size(b);
  const bool same = sa == sb;
  const bool suffix = !same && sb.size() <= sa.size() && nb > 0 &&
                      std::equal(sb.begin(), sb.end(), sa.end() - sb.size());
  require(same || suffix, "sub",
          "shapes " + shape_str(sa) + " and " + shape_str(sb) + " incompatible");
  std::vector<T> out(na);
  const T* pa = nodes_[a.id].val.data();
  const T* pb = nodes_[b.id].val.data();
  for (int64_t i = 0; i < na; ++i) out[i] = pa[i] - pb[i % nb];
  Var<T> o = push("sub", sa, std::move(out), nullptr);
  nodes_[o.id].back = [this, a, b, o, na, nb] {
    const T* go = nodes_[o.id].grad.data();
    T* ga = nodes_[a.id].grad.data();
    T* gb = nodes_[b.id].grad.data();
    for (int64_t i = 0; i < na; ++i) {
      ga[i] += go[i];
      gb[i % nb] -= go[i];
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::mul(Var<T> a, Var<T> b) {
  const Shape sa = shape(a);
  const Shape sb = shape(b);
  const int64_t na = size(a), nb = size(b);
  const bool same = sa == sb;
  const bool suffix = !same && sb.size() <= sa.size() && nb > 0 &&
                      std::equal(sb.begin(), sb.end(), sa.end() - sb.size());
  require(same || suffix, "mul",
          "shapes " + shape_str(sa) + " and " + shape_str(sb) + " incompatible");
  std::vector<T> out(na);
  const T* pa = nodes_[a.id].val.data();
  const T* pb = nodes_[b.id].val.data();
  for (int64_t i = 0; i < na; ++i) out[i] = pa[i] * pb[i % nb];
  Var<T> o = push("mul", sa, std::move(out), nullptr);
  nodes_[o.id].back = [this, a, b, o, na, nb] {
    const T* go = nodes_[o.id].grad.data();
    const T* pa = nodes_[a.id].val.data();
    const T* pb = nodes_[b.id].val.data();
    T* ga = nodes_[a.id].grad.data();
    T* gb = nodes_[b.id].grad.data();
    for (int64_t i = 0; i < na; ++i) {
      ga[i] += go[i] * pb[i % nb];
      gb[i % nb] += go[i] * pa[i];
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::scale(Var<T> a, T c) {
  const int64_t n = size(a);
  std::vector<T> out(n);
  const T* pa = nodes_[a.id].val.data();
  for (int64_t i = 0; i < n; ++i) out[i] = pa[i] * c;
  Var<T> o = push("scale", shape(a), std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, c, n] {
    const T* go = nodes_[o.id].grad.data();
    T* ga = nodes_[a.id].grad.data();
    for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * c;
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::add_const(Var<T> a, T c) {
  const int64_t n = size(a);
  std::vector<T> out(n);
  const T* pa = nodes_[a.id].val.data();
  for (int64_t i = 0; i < n; ++i) out[i] = pa[i] + c;
  Var<T> o = push("add_const", shape(a), std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, n] {
    const T* go = nodes_[o.id].grad.data();
    T* ga = nodes_[a.id].grad.data();
    for (int64_t i = 0; i < n; ++i) ga[i] += go[i];
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::relu(Var<T> a) {
  const int64_t n = size(a);
  std::vector<T> out(n);
  const T* pa = nodes_[a.id].val.data();
  for (int64_t i = 0; i < n; ++i) out[i] = pa[i] > T(0) ? pa[i] : T(0);
  Var<T> o = push("relu", shape(a), std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, n] {
    const T* go = nodes_[o.id].grad.data();
    const T* pa = nodes_[a.id].val.data();
    T* ga = nodes_[a.id].grad.data();
    for (int64_t i = 0; i < n; ++i)
      if (pa[i] > T(0)) ga[i] += go[i];
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::sigmoid(Var<T> a) {
  const int64_t n = size(a);
  std::vector<T> out(n);
  const T* pa = nodes_[a.id].val.data();
  for (int64_t i = 0; i < n; ++i) out[i] = T(1) / (T(1) + std::exp(-pa[i]));
  Var<T> o = push("sigmoid", shape(a), std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, n] {
    const T* go = nodes_[o.id].grad.data();
    const T* po = nodes_[o.id].val.data();
    T* ga = nodes_[a.id].grad.data();
    for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * po[i] * (T(1) - po[i]);
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::logit(Var<T> a, T eps) {
  const int64_t n = size(a);
  std::vector<T> out(n);
  const T* pa = nodes_[a.id].val.data();
  for (int64_t i = 0; i < n; ++i) {
    const T xc = std::min(std::max(pa[i], eps), T(1) - eps);
    out[i] = std::log(xc) - std::log(T(1) - xc);
  }
  Var<T> o = push("logit", shape(a), std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, eps, n] {
    const T* go = nodes_[o.id].grad.data();
    const T* pa = nodes_[a.id].val.data();
    T* ga = nodes_[a.id].grad.data();
    for (int64_t i = 0; i < n; ++i) {
      if (pa[i] >= eps && pa[i] <= T(1) - eps) {
        ga[i] += go[i] / (pa[i] * (T(1) - pa[i]));
      }
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::exp(Var<T> a) {
  const int64_t n = size(a);
  std::vector<T> out(n);
  const T* pa = nodes_[a.id].val.data();
  for (int64_t i = 0; i < n; ++i) out[i] = std::exp(pa[i]);
  Var<T> o = push("exp", shape(a), std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, n] {
    const T* go = nodes_[o.id].grad.data();
    const T* po = nodes_[o.id].val.data();
    T* ga = nodes_[a.id].grad.data();
    for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * po[i];
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::log(Var<T> a) {
  const int64_t n = size(a);
  std::vector<T> out(n);
  const T* pa = nodes_[a.id].val.data();
  for (int64_t i = 0; i < n; ++i) out[i] = std::log(pa[i]);
  Var<T> o = push("log", shape(a), std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, n] {
    const T* go = nodes_[o.id].grad.data();
    const T* pa = nodes_[a.id].val.data();
    T* ga = nodes_[a.id].grad.data();
    for (int64_t i = 0; i < n; ++i) ga[i] += go[i] / pa[i];
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::abs(Var<T> a) {
  const int64_t n = size(a);
  std::vector<T> out(n);
  const T* pa = nodes_[a.id].val.data();
  for (int64_t i = 0; i < n; ++i) out[i] = std::abs(pa[i]);
  Var<T> o = push("abs", shape(a), std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, n] {
    const T* go = nodes_[o.id].grad.data();
    const T* pa = nodes_[a.id].val.data();
    T* ga = nodes_[a.id].grad.data();
    for (int64_t i = 0; i < n; ++i) {
      if (pa[i] > T(0)) ga[i] += go[i];
      else if (pa[i] < T(0)) ga[i] -= go[i];
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::pow_const(Var<T> a, T p) {
  const int64_t n = size(a);
  std::vector<T> out(n);
  const T* pa = nodes_[a.id].val.data();
  for (int64_t i = 0; i < n; ++i) out[i] = std::pow(pa[i], p);
  Var<T> o = push("pow_const", shape(a), std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, p, n] {
    const T* go = nodes_[o.id].grad.data();
    const T* pa = nodes_[a.id].val.data();
    T* ga = nodes_[a.id].grad.data();
    for (int64_t i = 0; i < n; ++i) ga[i] += go[i] * p * std::pow(pa[i], p - T(1));
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::clamp(Var<T> a, T lo, T hi) {
  const int64_t n = size(a);
  std::vector<T> out(n);
  const T* pa = nodes_[a.id].val.data();
  for (int64_t i = 0; i < n; ++i) out[i] = std::min(std::max(pa[i], lo), hi);
  Var<T> o = push("clamp", shape(a), std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, lo, hi, n] {
    const T* go = nodes_[o.id].grad.data();
    const T* pa = nodes_[a.id].val.data();
    T* ga = nodes_[a.id].grad.data();
    for (int64_t i = 0; i < n; ++i)
      if (pa[i] >= lo && pa[i] <= hi) ga[i] += go[i];
  };
  return o;
}

// ------------------------------------------------------------ linear algebra

template <typename T>
Var<T> Tape<T>::matmul(Var<T> a, Var<T> b) {
  const Shape& sa = shape(a);
  const Shape& sb = shape(b);
  require(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0], "matmul",
          "shapes " + shape_str(sa) + " x " + shape_str(sb));
  const int m = sa[0], k = sa[1], n = sb[1];
  std::vector<T> out(static_cast<size_t>(m) * n, T(0));
  const T* pa = nodes_[a.id].val.data();
  const T* pb = nodes_[b.id].val.data();
  for (int i = 0; i < m; ++i) {
    T* orow = out.data() + static_cast<size_t>(i) * n;
    const T* arow = pa + static_cast<size_t>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const T av = arow[kk];
      const T* brow = pb + static_cast<size_t>(kk) * n;
      for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  Var<T> o = push("matmul", {m, n}, std::move(out), nullptr);
  nodes_[o.id].back = [this, a, b, o, m, k, n] {
    const T* go = nodes_[o.id].grad.data();
    const T* pa = nodes_[a.id].val.data();
    const T* pb = nodes_[b.id].val.data();
    T* ga = nodes_[a.id].grad.data();
    T* gb = nodes_[b.id].grad.data();
    // dA = dC * B^T
    for (int i = 0; i < m; ++i) {
      const T* grow = go + static_cast<size_t>(i) * n;
      T* garow = ga + static_cast<size_t>(i) * k;
      for (int kk = 0; kk < k; ++kk) {
        const T* brow = pb + static_cast<size_t>(kk) * n;
        T s = T(0);
        for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
        garow[kk] += s;
      }
    }
    // dB = A^T * dC
    for (int i = 0; i < m; ++i) {
      const T* arow = pa + static_cast<size_t>(i) * k;
      const T* grow = go + static_cast<size_t>(i) * n;
      for (int kk = 0; kk < k; ++kk) {
        const T av = arow[kk];
        T* gbrow = gb + static_cast<size_t>(kk) * n;
        for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
      }
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::bmm(Var<T> a, Var<T> b) {
  const Shape& sa = shape(a);
  const Shape& sb = shape(b);
  require(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[1],
          "bmm", "shapes " + shape_str(sa) + " x " + shape_str(sb));
  const int B = sa[0], m = sa[1], k = sa[2], n = sb[2];
  std::vector<T> out(static_cast<size_t>(B) * m * n, T(0));
  const T* pa = nodes_[a.id].val.data();
  const T* pb = nodes_[b.id].val.data();
  for (int bi = 0; bi < B; ++bi) {
    const T* A = pa + static_cast<size_t>(bi) * m * k;
    const T* Bm = pb + static_cast<size_t>(bi) * k * n;
    T* C = out.data() + static_cast<size_t>(bi) * m * n;
    for (int i = 0; i < m; ++i) {
      for (int kk = 0; kk < k; ++kk) {
        const T av = A[static_cast<size_t>(i) * k + kk];
        const T* brow = Bm + static_cast<size_t>(kk) * n;
        T* crow = C + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  }
  Var<T> o = push("bmm", {B, m, n}, std::move(out), nullptr);
  nodes_[o.id].back = [this, a, b, o, B, m, k, n] {
    const T* go = nodes_[o.id].grad.data();
    const T* pa = nodes_[a.id].val.data();
    const T* pb = nodes_[b.id].val.data();
    T* ga = nodes_[a.id].grad.data();
    T* gb = nodes_[b.id].grad.data();
    for (int bi = 0; bi < B; ++bi) {
      const T* A = pa + static_cast<size_t>(bi) * m * k;
      const T* Bm = pb + static_cast<size_t>(bi) * k * n;
      const T* G = go + static_cast<size_t>(bi) * m * n;
      T* gA = ga + static_cast<size_t>(bi) * m * k;
      T* gB = gb + static_cast<size_t>(bi) * k * n;
      for (int i = 0; i < m; ++i) {
        const T* grow = G + static_cast<size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
          const T* brow = Bm + static_cast<size_t>(kk) * n;
          T s = T(0);
          for (int j = 0; j < n; ++j) s += grow[j] * brow[j];
          gA[static_cast<size_t>(i) * k + kk] += s;
        }
        const T* arow = A + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
          const T av = arow[kk];
          T* gbrow = gB + static_cast<size_t>(kk) * n;
          for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::bmm_nt(Var<T> a, Var<T> b) {
  const Shape& sa = shape(a);
  const Shape& sb = shape(b);
  require(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[2],
          "bmm_nt", "shapes " + shape_str(sa) + " x " + shape_str(sb) + "^T");
  const int B = sa[0], m = sa[1], k = sa[2], n = sb[1];
  std::vector<T> out(static_cast<size_t>(B) * m * n, T(0));
  const T* pa = nodes_[a.id].val.data();
  const T* pb = nodes_[b.id].val.data();
  for (int bi = 0; bi < B; ++bi) {
    const T* A = pa + static_cast<size_t>(bi) * m * k;
    const T* Bt = pb + static_cast<size_t>(bi) * n * k;
    T* C = out.data() + static_cast<size_t>(bi) * m * n;
    for (int i = 0; i < m; ++i) {
      const T* arow = A + static_cast<size_t>(i) * k;
      T* crow = C + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const T* brow = Bt + static_cast<size_t>(j) * k;
        T s = T(0);
        for (int kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
        crow[j] = s;
      }
    }
  }
  Var<T> o = push("bmm_nt", {B, m, n}, std::move(out), nullptr);
  nodes_[o.id].back = [this, a, b, o, B, m, k, n] {
    const T* go = nodes_[o.id].grad.data();
    const T* pa = nodes_[a.id].val.data();
    const T* pb = nodes_[b.id].val.data();
    T* ga = nodes_[a.id].grad.data();
    T* gb = nodes_[b.id].grad.data();
    for (int bi = 0; bi < B; ++bi) {
      const T* A = pa + static_cast<size_t>(bi) * m * k;
      const T* Bt = pb + static_cast<size_t>(bi) * n * k;
      const T* G = go + static_cast<size_t>(bi) * m * n;
      T* gA = ga + static_cast<size_t>(bi) * m * k;
      T* gB = gb + static_cast<size_t>(bi) * n * k;
      for (int i = 0; i < m; ++i) {
        const T* grow = G + static_cast<size_t>(i) * n;
        const T* arow = A + static_cast<size_t>(i) * k;
        T* garow = gA + static_cast<size_t>(i) * k;
        for (int j = 0; j < n; ++j) {
          const T gv = grow[j];
          if (gv == T(0)) continue;
          const T* brow = Bt + static_cast<size_t>(j) * k;
          T* gbrow = gB + static_cast<size_t>(j) * k;
          for (int kk = 0; kk < k; ++kk) {
            garow[kk] += gv * brow[kk];
            gbrow[kk] += gv * arow[kk];
          }
        }
      }
    }
  };
  return o;
}

// --------------------------------------------------------- shape manipulation

template <typename T>
Var<T> Tape<T>::reshape(Var<T> a, Shape s) {
  require(numel(s) == size(a), "reshape",
          "cannot view " + shape_str(shape(a)) + " as " + shape_str(s));
  std::vector<T> out(nodes_[a.id].val);
  Var<T> o = push("reshape", std::move(s), std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o] {
    const auto& go = nodes_[o.id].grad;
    T* ga = nodes_[a.id].grad.data();
    for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::transpose(Var<T> a) {
  require(shape(a).size() == 2, "transpose", "expects 2-D, got " + shape_str(shape(a)));
  return permute(a, {1, 0});
}

template <typename T>
Var<T> Tape<T>::permute(Var<T> a, const std::vector<int>& perm) {
  const Shape& sa = shape(a);
  const int nd = static_cast<int>(sa.size());
  require(static_cast<int>(perm.size()) == nd, "permute", "rank mismatch");
  Shape so(nd);
  for (int i = 0; i < nd; ++i) so[i] = sa[perm[i]];
  // Source strides, then strides seen through the permutation.
  std::vector<int64_t> src_stride(nd, 1);
  for (int i = nd - 2; i >= 0; --i) src_stride[i] = src_stride[i + 1] * sa[i + 1];
  std::vector<int64_t> stride(nd);
  for (int i = 0; i < nd; ++i) stride[i] = src_stride[perm[i]];

  const int64_t n = size(a);
  std::vector<T> out(n);
  const T* pa = nodes_[a.id].val.data();
  std::vector<int64_t> idx(nd, 0);
  int64_t src = 0;
  for (int64_t i = 0; i < n; ++i) {
    out[i] = pa[src];
    for (int d = nd - 1; d >= 0; --d) {
      if (++idx[d] < so[d]) {
        src += stride[d];
        break;
      }
      src -= stride[d] * (so[d] - 1);
      idx[d] = 0;
    }
  }
  Var<T> o = push("permute", so, std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, so, stride, nd, n] {
    const T* go = nodes_[o.id].grad.data();
    T* ga = nodes_[a.id].grad.data();
    std::vector<int64_t> idx(nd, 0);
    int64_t src = 0;
    for (int64_t i = 0; i < n; ++i) {
      ga[src] += go[i];
      for (int d = nd - 1; d >= 0; --d) {
        if (++idx[d] < so[d]) {
          src += stride[d];
          break;
        }
        src -= stride[d] * (so[d] - 1);
        idx[d] = 0;
      }
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::concat(const std::vector<Var<T>>& xs, int axis) {
  require(!xs.empty(), "concat", "no inputs");
  const Shape& s0 = shape(xs[0]);
  const int nd = static_cast<int>(s0.size());
  require(axis >= 0 && axis < nd, "concat", "axis out of range");
  int total = 0;
  for (Var<T> x : xs) {
    const Shape& s = shape(x);
    require(static_cast<int>(s.size()) == nd, "concat", "rank mismatch");
    for (int d = 0; d < nd; ++d) {
      require(d == axis || s[d] == s0[d], "concat",
              "shape mismatch at axis " + std::to_string(d));
    }
    total += s[axis];
  }
  Shape so = s0;
  so[axis] = total;
  const AxisSplit sp = split_at(so, axis);
  std::vector<T> out(numel(so));
  std::vector<int64_t> piece(xs.size());
  int64_t off = 0;
  for (size_t xi = 0; xi < xs.size(); ++xi) {
    const int64_t dim_x = shape(xs[xi])[axis];
    piece[xi] = dim_x;
    const T* px = nodes_[xs[xi].id].val.data();
    for (int64_t ou = 0; ou < sp.outer; ++ou) {
      std::copy(px + ou * dim_x * sp.inner, px + (ou + 1) * dim_x * sp.inner,
                out.data() + (ou * sp.dim + off) * sp.inner);
    }
    off += dim_x;
  }
  Var<T> o = push("concat", so, std::move(out), nullptr);
  std::vector<Var<T>> parents = xs;
  nodes_[o.id].back = [this, parents, o, sp, piece] {
    const T* go = nodes_[o.id].grad.data();
    int64_t off = 0;
    for (size_t xi = 0; xi < parents.size(); ++xi) {
      T* gx = nodes_[parents[xi].id].grad.data();
      const int64_t dim_x = piece[xi];
      for (int64_t ou = 0; ou < sp.outer; ++ou) {
        const T* src = go + (ou * sp.dim + off) * sp.inner;
        T* dst = gx + ou * dim_x * sp.inner;
        for (int64_t i = 0; i < dim_x * sp.inner; ++i) dst[i] += src[i];
      }
      off += dim_x;
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::gather_rows(Var<T> a, std::vector<int> idx) {
  const Shape& sa = shape(a);
  require(!sa.empty(), "gather_rows", "scalar input");
  const int rows = sa[0];
  const int64_t rsize = numel(sa) / std::max(rows, 1);
  for (int i : idx)
    require(i >= 0 && i < rows, "gather_rows",
            "index " + std::to_string(i) + " out of range [0," + std::to_string(rows) + ")");
  Shape so = sa;
  so[0] = static_cast<int>(idx.size());
  std::vector<T> out(numel(so));
  const T* pa = nodes_[a.id].val.data();
  for (size_t r = 0; r < idx.size(); ++r) {
    std::copy(pa + idx[r] * rsize, pa + (idx[r] + 1) * rsize, out.data() + r * rsize);
  }
  Var<T> o = push("gather_rows", std::move(so), std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, idx = std::move(idx), rsize] {
    const T* go = nodes_[o.id].grad.data();
    T* ga = nodes_[a.id].grad.data();
    for (size_t r = 0; r < idx.size(); ++r) {
      const T* src = go + r * rsize;
      T* dst = ga + idx[r] * rsize;
      for (int64_t i = 0; i < rsize; ++i) dst[i] += src[i];
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::slice_rows(Var<T> a, int begin, int end) {
  const Shape& sa = shape(a);
  require(!sa.empty() && begin >= 0 && end <= sa[0] && begin < end, "slice_rows",
          "range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
              shape_str(sa));
  const int64_t rsize = numel(sa) / sa[0];
  Shape so = sa;
  so[0] = end - begin;
  std::vector<T> out(nodes_[a.id].val.begin() + begin * rsize,
                     nodes_[a.id].val.begin() + end * rsize);
  Var<T> o = push("slice_rows", std::move(so), std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, begin, rsize] {
    const auto& go = nodes_[o.id].grad;
    T* ga = nodes_[a.id].grad.data() + begin * rsize;
    for (size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::slice_last(Var<T> a, int begin, int end) {
  const Shape& sa = shape(a);
  require(!sa.empty(), "slice_last", "scalar input");
  const int L = sa.back();
  require(begin >= 0 && end <= L && begin < end, "slice_last", "bad range");
  const int64_t rows = numel(sa) / L;
  const int w = end - begin;
  Shape so = sa;
  so.back() = w;
  std::vector<T> out(rows * w);
  const T* pa = nodes_[a.id].val.data();
  for (int64_t r = 0; r < rows; ++r) {
    std::copy(pa + r * L + begin, pa + r * L + end, out.data() + r * w);
  }
  Var<T> o = push("slice_last", std::move(so), std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, begin, L, rows, w] {
    const T* go = nodes_[o.id].grad.data();
    T* ga = nodes_[a.id].grad.data();
    for (int64_t r = 0; r < rows; ++r) {
      for (int i = 0; i < w; ++i) ga[r * L + begin + i] += go[r * w + i];
    }
  };
  return o;
}

// ------------------------------------------------- normalization / reductions

template <typename T>
Var<T> Tape<T>::softmax(Var<T> a) {
  const Shape& sa = shape(a);
  require(!sa.empty(), "softmax", "scalar input");
  const int L = sa.back();
  const int64_t rows = numel(sa) / L;
  std::vector<T> out(numel(sa));
  const T* pa = nodes_[a.id].val.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = pa + r * L;
    T* y = out.data() + r * L;
    T mx = x[0];
    for (int i = 1; i < L; ++i) mx = std::max(mx, x[i]);
    T sum = T(0);
    for (int i = 0; i < L; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    const T inv = T(1) / sum;
    for (int i = 0; i < L; ++i) y[i] *= inv;
  }
  Var<T> o = push("softmax", sa, std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, L, rows] {
    const T* go = nodes_[o.id].grad.data();
    const T* po = nodes_[o.id].val.data();
    T* ga = nodes_[a.id].grad.data();
    for (int64_t r = 0; r < rows; ++r) {
      const T* g = go + r * L;
      const T* y = po + r * L;
      T dotgy = T(0);
      for (int i = 0; i < L; ++i) dotgy += g[i] * y[i];
      T* gx = ga + r * L;
      for (int i = 0; i < L; ++i) gx[i] += y[i] * (g[i] - dotgy);
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::log_softmax(Var<T> a) {
  const Shape& sa = shape(a);
  require(!sa.empty(), "log_softmax", "scalar input");
  const int L = sa.back();
  const int64_t rows = numel(sa) / L;
  std::vector<T> out(numel(sa));
  const T* pa = nodes_[a.id].val.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = pa + r * L;
    T* y = out.data() + r * L;
    T mx = x[0];
    for (int i = 1; i < L; ++i) mx = std::max(mx, x[i]);
    T sum = T(0);
    for (int i = 0; i < L; ++i) sum += std::exp(x[i] - mx);
    const T lse = mx + std::log(sum);
    for (int i = 0; i < L; ++i) y[i] = x[i] - lse;
  }
  Var<T> o = push("log_softmax", sa, std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, L, rows] {
    const T* go = nodes_[o.id].grad.data();
    const T* po = nodes_[o.id].val.data();
    T* ga = nodes_[a.id].grad.data();
    for (int64_t r = 0; r < rows; ++r) {
      const T* g = go + r * L;
      const T* y = po + r * L;
      T gsum = T(0);
      for (int i = 0; i < L; ++i) gsum += g[i];
      T* gx = ga + r * L;
      for (int i = 0; i < L; ++i) gx[i] += g[i] - std::exp(y[i]) * gsum;
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::layer_norm(Var<T> a, Var<T> gamma, Var<T> beta, T eps) {
  const Shape& sa = shape(a);
  require(!sa.empty(), "layer_norm", "scalar input");
  const int L = sa.back();
  require(shape(gamma) == Shape{L} && shape(beta) == Shape{L}, "layer_norm",
          "gamma/beta must be [" + std::to_string(L) + "]");
  const int64_t rows = numel(sa) / L;
  std::vector<T> out(numel(sa));
  std::vector<T> mu(rows), rstd(rows);
  const T* pa = nodes_[a.id].val.data();
  const T* pg = nodes_[gamma.id].val.data();
  const T* pbt = nodes_[beta.id].val.data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* x = pa + r * L;
    T m = T(0);
    for (int i = 0; i < L; ++i) m += x[i];
    m /= T(L);
    T var = T(0);
    for (int i = 0; i < L; ++i) var += (x[i] - m) * (x[i] - m);
    var /= T(L);
    const T rs = T(1) / std::sqrt(var + eps);
    mu[r] = m;
    rstd[r] = rs;
    T* y = out.data() + r * L;
    for (int i = 0; i < L; ++i) y[i] = (x[i] - m) * rs * pg[i] + pbt[i];
  }
  Var<T> o = push("layer_norm", sa, std::move(out), nullptr);
  nodes_[o.id].back = [this, a, gamma, beta, o, L, rows, mu = std::move(mu),
                       rstd = std::move(rstd)] {
    const T* go = nodes_[o.id].grad.data();
    const T* pa = nodes_[a.id].val.data();
    const T* pg = nodes_[gamma.id].val.data();
    T* ga = nodes_[a.id].grad.data();
    T* gg = nodes_[gamma.id].grad.data();
    T* gb = nodes_[beta.id].grad.data();
    std::vector<T> xhat(L), dxh(L);
    for (int64_t r = 0; r < rows; ++r) {
      const T* x = pa + r * L;
      const T* g = go + r * L;
      const T m = mu[r], rs = rstd[r];
      T m1 = T(0), m2 = T(0);
      for (int i = 0; i < L; ++i) {
        xhat[i] = (x[i] - m) * rs;
        dxh[i] = g[i] * pg[i];
        m1 += dxh[i];
        m2 += dxh[i] * xhat[i];
        gg[i] += g[i] * xhat[i];
        gb[i] += g[i];
      }
      m1 /= T(L);
      m2 /= T(L);
      T* gx = ga + r * L;
      for (int i = 0; i < L; ++i) gx[i] += rs * (dxh[i] - m1 - xhat[i] * m2);
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::sum_all(Var<T> a) {
  const int64_t n = size(a);
  const T* pa = nodes_[a.id].val.data();
  T s = T(0);
  for (int64_t i = 0; i < n; ++i) s += pa[i];
  Var<T> o = push("sum_all", {1}, {s}, nullptr);
  nodes_[o.id].back = [this, a, o, n] {
    const T g = nodes_[o.id].grad[0];
    T* ga = nodes_[a.id].grad.data();
    for (int64_t i = 0; i < n; ++i) ga[i] += g;
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::mean_all(Var<T> a) {
  const int64_t n = size(a);
  const T* pa = nodes_[a.id].val.data();
  T s = T(0);
  for (int64_t i = 0; i < n; ++i) s += pa[i];
  s /= T(n);
  Var<T> o = push("mean_all", {1}, {s}, nullptr);
  nodes_[o.id].back = [this, a, o, n] {
    const T g = nodes_[o.id].grad[0] / T(n);
    T* ga = nodes_[a.id].grad.data();
    for (int64_t i = 0; i < n; ++i) ga[i] += g;
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::sum_last(Var<T> a) {
  const Shape& sa = shape(a);
  require(!sa.empty(), "sum_last", "scalar input");
  const int L = sa.back();
  const int64_t rows = numel(sa) / L;
  Shape so(sa.begin(), sa.end() - 1);
  if (so.empty()) so = {1};
  std::vector<T> out(rows, T(0));
  const T* pa = nodes_[a.id].val.data();
  for (int64_t r = 0; r < rows; ++r) {
    T s = T(0);
    for (int i = 0; i < L; ++i) s += pa[r * L + i];
    out[r] = s;
  }
  Var<T> o = push("sum_last", std::move(so), std::move(out), nullptr);
  nodes_[o.id].back = [this, a, o, L, rows] {
    const T* go = nodes_[o.id].grad.data();
    T* ga = nodes_[a.id].grad.data();
    for (int64_t r = 0; r < rows; ++r) {
      for (int i = 0; i < L; ++i) ga[r * L + i] += go[r];
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::mean_last(Var<T> a) {
  const int L = shape(a).back();
  return scale(sum_last(a), T(1) / T(L));
}

// ------------------------------------------------------------------ domain ops

template <typename T>
Var<T> Tape<T>::sinusoidal_encode(Var<T> coords, int dims, T temperature) {
  const Shape& sc = shape(coords);
  require(sc.size() == 2 && sc[1] == 2, "sinusoidal_encode",
          "expects [m,2], got " + shape_str(sc));
  require(dims % 4 == 0, "sinusoidal_encode", "dims must be divisible by 4");
  const int m = sc[0];
  const int half = dims / 2;
  std::vector<T> denom(half / 2);
  for (int i = 0; i < half / 2; ++i) {
    denom[i] = std::pow(temperature, T(2 * i) / T(half));
  }
  std::vector<T> out(static_cast<size_t>(m) * dims);
  const T* pc = nodes_[coords.id].val.data();
  for (int r = 0; r < m; ++r) {
    for (int c = 0; c < 2; ++c) {
      const T s = pc[r * 2 + c] * T(kTwoPi);
      T* y = out.data() + static_cast<size_t>(r) * dims + c * half;
      for (int i = 0; i < half / 2; ++i) {
        const T arg = s / denom[i];
        y[2 * i] = std::sin(arg);
        y[2 * i + 1] = std::cos(arg);
      }
    }
  }
  Var<T> o = push("sinusoidal_encode", {m, dims}, std::move(out), nullptr);
  nodes_[o.id].back = [this, coords, o, m, dims, half, denom = std::move(denom)] {
    const T* go = nodes_[o.id].grad.data();
    const T* po = nodes_[o.id].val.data();
    T* gc = nodes_[coords.id].grad.data();
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < 2; ++c) {
        const T* g = go + static_cast<size_t>(r) * dims + c * half;
        const T* y = po + static_cast<size_t>(r) * dims + c * half;
        T acc = T(0);
        for (int i = 0; i < half / 2; ++i) {
          const T w = T(kTwoPi) / denom[i];
          // d sin(arg)/dv = cos(arg) * w; d cos(arg)/dv = -sin(arg) * w
          acc += g[2 * i] * y[2 * i + 1] * w - g[2 * i + 1] * y[2 * i] * w;
        }
        gc[r * 2 + c] += acc;
      }
    }
  };
  return o;
}

namespace {

// Shared bilinear corner bookkeeping: pixel-space position, the two cell
// indices and the fractional weights, with out-of-range cells flagged by -1.
struct Corners {
  int x0, x1, y0, y1;
  double fx, fy;
};

inline Corners corner_setup(double xn, double yn, int W, int H) {
  const double px = xn * W - 0.5;
  const double py = yn * H - 0.5;
  const double fx0 = std::floor(px);
  const double fy0 = std::floor(py);
  Corners c;
  c.fx = px - fx0;
  c.fy = py - fy0;
  const auto clampi = [](double v, int lim) {
    const int i = static_cast<int>(v);
    return (v >= 0 && i < lim) ? i : -1;
  };
  c.x0 = clampi(fx0, W);
  c.x1 = clampi(fx0 + 1, W);
  c.y0 = clampi(fy0, H);
  c.y1 = clampi(fy0 + 1, H);
  return c;
}

}  // namespace

template <typename T>
Var<T> Tape<T>::bilinear_sample(Var<T> fmap, Var<T> loc) {
  const Shape& sf = shape(fmap);
  const Shape& sl = shape(loc);
  require(sf.size() == 3, "bilinear_sample", "feature map must be [H,W,C]");
  const bool single = sl == Shape{2};
  require(single || (sl.size() == 2 && sl[1] == 2), "bilinear_sample",
          "locations must be [m,2] or [2]");
  const int H = sf[0], W = sf[1], C = sf[2];
  const int m = single ? 1 : sl[0];
  std::vector<T> out(static_cast<size_t>(m) * C, T(0));
  const T* pf = nodes_[fmap.id].val.data();
  const T* pl = nodes_[loc.id].val.data();
  for (int r = 0; r < m; ++r) {
    const Corners cr = corner_setup(pl[r * 2], pl[r * 2 + 1], W, H);
    T* y = out.data() + static_cast<size_t>(r) * C;
    const auto acc = [&](int xi, int yi, double w) {
      if (xi < 0 || yi < 0 || w == 0.0) return;
      const T* cell = pf + (static_cast<size_t>(yi) * W + xi) * C;
      for (int ch = 0; ch < C; ++ch) y[ch] += static_cast<T>(w) * cell[ch];
    };
    acc(cr.x0, cr.y0, (1 - cr.fx) * (1 - cr.fy));
    acc(cr.x1, cr.y0, cr.fx * (1 - cr.fy));
    acc(cr.x0, cr.y1, (1 - cr.fx) * cr.fy);
    acc(cr.x1, cr.y1, cr.fx * cr.fy);
  }
  Shape so = single ? Shape{C} : Shape{m, C};
  Var<T> o = push("bilinear_sample", std::move(so), std::move(out), nullptr);
  nodes_[o.id].back = [this, fmap, loc, o, H, W, C, m] {
    const T* go = nodes_[o.id].grad.data();
    const T* pf = nodes_[fmap.id].val.data();
    const T* pl = nodes_[loc.id].val.data();
    T* gf = nodes_[fmap.id].grad.data();
    T* gl = nodes_[loc.id].grad.data();
    for (int r = 0; r < m; ++r) {
      const Corners cr = corner_setup(pl[r * 2], pl[r * 2 + 1], W, H);
      const T* g = go + static_cast<size_t>(r) * C;
      const auto cell_val = [&](int xi, int yi, int ch) -> T {
        if (xi < 0 || yi < 0) return T(0);
        return pf[(static_cast<size_t>(yi) * W + xi) * C + ch];
      };
      const auto cell_gacc = [&](int xi, int yi, double w) {
        if (xi < 0 || yi < 0 || w == 0.0) return;
        T* cell = gf + (static_cast<size_t>(yi) * W + xi) * C;
        for (int ch = 0; ch < C; ++ch) cell[ch] += static_cast<T>(w) * g[ch];
      };
      cell_gacc(cr.x0, cr.y0, (1 - cr.fx) * (1 - cr.fy));
      cell_gacc(cr.x1, cr.y0, cr.fx * (1 - cr.fy));
      cell_gacc(cr.x0, cr.y1, (1 - cr.fx) * cr.fy);
      cell_gacc(cr.x1, cr.y1, cr.fx * cr.fy);
      double dx = 0.0, dy = 0.0;
      for (int ch = 0; ch < C; ++ch) {
        const double v00 = cell_val(cr.x0, cr.y0, ch);
        const double v10 = cell_val(cr.x1, cr.y0, ch);
        const double v01 = cell_val(cr.x0, cr.y1, ch);
        const double v11 = cell_val(cr.x1, cr.y1, ch);
        const double gc = g[ch];
        dx += gc * ((v10 - v00) * (1 - cr.fy) + (v11 - v01) * cr.fy);
        dy += gc * ((v01 - v00) * (1 - cr.fx) + (v11 - v10) * cr.fx);
      }
      gl[r * 2] += static_cast<T>(dx * W);
      gl[r * 2 + 1] += static_cast<T>(dy * H);
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::ms_deform_attend(Var<T> value, const std::vector<LevelSpec>& levels,
                                 Var<T> loc, Var<T> weight, int heads, int points) {
  const Shape& sv = shape(value);
  const Shape& sl = shape(loc);
  const Shape& sw = shape(weight);
  require(sv.size() == 2, "ms_deform_attend", "value must be [P,d]");
  const int d = sv[1];
  require(d % heads == 0, "ms_deform_attend", "d not divisible by heads");
  const int L = static_cast<int>(levels.size());
  const int S = heads * L * points;
  require(sl.size() == 3 && sl[2] == 2 && sl[1] == S, "ms_deform_attend",
          "locations must be [Q," + std::to_string(S) + ",2], got " + shape_str(sl));
  require(sw.size() == 2 && sw[0] == sl[0] && sw[1] == S, "ms_deform_attend",
          "weights must match locations");
  const int Q = sl[0];
  const int hd = d / heads;

  const T* pv = nodes_[value.id].val.data();
  const T* pl = nodes_[loc.id].val.data();
  const T* pw = nodes_[weight.id].val.data();
  std::vector<T> out(static_cast<size_t>(Q) * d, T(0));
  for (int q = 0; q < Q; ++q) {
    for (int h = 0; h < heads; ++h) {
      T* y = out.data() + static_cast<size_t>(q) * d + h * hd;
      for (int l = 0; l < L; ++l) {
        const LevelSpec& lv = levels[l];
        for (int s = 0; s < points; ++s) {
          const int flat = (h * L + l) * points + s;
          const T w = pw[static_cast<size_t>(q) * S + flat];
          if (w == T(0)) continue;
          const T* xy = pl + (static_cast<size_t>(q) * S + flat) * 2;
          const Corners cr = corner_setup(xy[0], xy[1], lv.w, lv.h);
          const auto acc = [&](int xi, int yi, double bw) {
            if (xi < 0 || yi < 0 || bw == 0.0) return;
            const T* cell = pv + (static_cast<size_t>(lv.start) + yi * lv.w + xi) * d + h * hd;
            const T f = w * static_cast<T>(bw);
            for (int c = 0; c < hd; ++c) y[c] += f * cell[c];
          };
          acc(cr.x0, cr.y0, (1 - cr.fx) * (1 - cr.fy));
          acc(cr.x1, cr.y0, cr.fx * (1 - cr.fy));
          acc(cr.x0, cr.y1, (1 - cr.fx) * cr.fy);
          acc(cr.x1, cr.y1, cr.fx * cr.fy);
        }
      }
    }
  }
  Var<T> o = push("ms_deform_attend", {Q, d}, std::move(out), nullptr);
  nodes_[o.id].back = [this, value, loc, weight, o, levels, heads, points, Q, d,
                       hd, S] {
    const int L = static_cast<int>(levels.size());
    const T* go = nodes_[o.id].grad.data();
    const T* pv = nodes_[value.id].val.data();
    const T* pl = nodes_[loc.id].val.data();
    const T* pw = nodes_[weight.id].val.data();
    T* gv = nodes_[value.id].grad.data();
    T* gl = nodes_[loc.id].grad.data();
    T* gw = nodes_[weight.id].grad.data();
    for (int q = 0; q < Q; ++q) {
      for (int h = 0; h < heads; ++h) {
        const T* g = go + static_cast<size_t>(q) * d + h * hd;
        for (int l = 0; l < L; ++l) {
          const LevelSpec& lv = levels[l];
          for (int s = 0; s < points; ++s) {
            const int flat = (h * L + l) * points + s;
            const T w = pw[static_cast<size_t>(q) * S + flat];
            const T* xy = pl + (static_cast<size_t>(q) * S + flat) * 2;
            const Corners cr = corner_setup(xy[0], xy[1], lv.w, lv.h);
            const auto cell = [&](int xi, int yi) -> const T* {
              if (xi < 0 || yi < 0) return nullptr;
              return pv + (static_cast<size_t>(lv.start) + yi * lv.w + xi) * d + h * hd;
            };
            const T* c00 = cell(cr.x0, cr.y0);
            const T* c10 = cell(cr.x1, cr.y0);
            const T* c01 = cell(cr.x0, cr.y1);
            const T* c11 = cell(cr.x1, cr.y1);
            const double w00 = (1 - cr.fx) * (1 - cr.fy);
            const double w10 = cr.fx * (1 - cr.fy);
            const double w01 = (1 - cr.fx) * cr.fy;
            const double w11 = cr.fx * cr.fy;
            double gwacc = 0.0, dx = 0.0, dy = 0.0;
            for (int c = 0; c < hd; ++c) {
              const double v00 = c00 ? c00[c] : 0.0;
              const double v10 = c10 ? c10[c] : 0.0;
              const double v01 = c01 ? c01[c] : 0.0;
              const double v11 = c11 ? c11[c] : 0.0;
              const double gc = g[c];
              gwacc += gc * (w00 * v00 + w10 * v10 + w01 * v01 + w11 * v11);
              dx += gc * ((v10 - v00) * (1 - cr.fy) + (v11 - v01) * cr.fy);
              dy += gc * ((v01 - v00) * (1 - cr.fx) + (v11 - v10) * cr.fx);
            }
            gw[static_cast<size_t>(q) * S + flat] += static_cast<T>(gwacc);
            gl[(static_cast<size_t>(q) * S + flat) * 2] += static_cast<T>(w * dx * lv.w);
            gl[(static_cast<size_t>(q) * S + flat) * 2 + 1] += static_cast<T>(w * dy * lv.h);
            if (w != T(0)) {
              const auto gcell = [&](int xi, int yi, double bw) {
                if (xi < 0 || yi < 0 || bw == 0.0) return;
                T* dst = gv + (static_cast<size_t>(lv.start) + yi * lv.w + xi) * d + h * hd;
                const T f = w * static_cast<T>(bw);
                for (int c = 0; c < hd; ++c) dst[c] += f * g[c];
              };
              gcell(cr.x0, cr.y0, w00);
              gcell(cr.x1, cr.y0, w10);
              gcell(cr.x0, cr.y1, w01);
              gcell(cr.x1, cr.y1, w11);
            }
          }
        }
      }
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::conv2d(Var<T> x, Var<T> kernel, int stride, int pad) {
  const Shape& sx = shape(x);
  const Shape& sk = shape(kernel);
  require(sx.size() == 3 && sk.size() == 4 && sx[2] == sk[2], "conv2d",
          "x " + shape_str(sx) + " kernel " + shape_str(sk));
  require(stride >= 1 && pad >= 0, "conv2d", "bad stride/pad");
  const int H = sx[0], W = sx[1], Ci = sx[2];
  const int kh = sk[0], kw = sk[1], Co = sk[3];
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  require(Ho > 0 && Wo > 0, "conv2d", "empty output");
  std::vector<T> out(static_cast<size_t>(Ho) * Wo * Co, T(0));
  const T* px = nodes_[x.id].val.data();
  const T* pk = nodes_[kernel.id].val.data();
  for (int oy = 0; oy < Ho; ++oy) {
    for (int ox = 0; ox < Wo; ++ox) {
      T* y = out.data() + (static_cast<size_t>(oy) * Wo + ox) * Co;
      for (int ky = 0; ky < kh; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= H) continue;
        for (int kx = 0; kx < kw; ++kx) {
          const int ix = ox * stride - pad + kx;
          if (ix < 0 || ix >= W) continue;
          const T* xc = px + (static_cast<size_t>(iy) * W + ix) * Ci;
          const T* kc = pk + (static_cast<size_t>(ky) * kw + kx) * Ci * Co;
          for (int ci = 0; ci < Ci; ++ci) {
            const T xv = xc[ci];
            const T* krow = kc + static_cast<size_t>(ci) * Co;
            for (int co = 0; co < Co; ++co) y[co] += xv * krow[co];
          }
        }
      }
    }
  }
  Var<T> o = push("conv2d", {Ho, Wo, Co}, std::move(out), nullptr);
  nodes_[o.id].back = [this, x, kernel, o, H, W, Ci, kh, kw, Co, Ho, Wo, stride, pad] {
    const T* go = nodes_[o.id].grad.data();
    const T* px = nodes_[x.id].val.data();
    const T* pk = nodes_[kernel.id].val.data();
    T* gx = nodes_[x.id].grad.data();
    T* gk = nodes_[kernel.id].grad.data();
    for (int oy = 0; oy < Ho; ++oy) {
      for (int ox = 0; ox < Wo; ++ox) {
        const T* g = go + (static_cast<size_t>(oy) * Wo + ox) * Co;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ox * stride - pad + kx;
            if (ix < 0 || ix >= W) continue;
            const T* xc = px + (static_cast<size_t>(iy) * W + ix) * Ci;
            T* gxc = gx + (static_cast<size_t>(iy) * W + ix) * Ci;
            const T* kc = pk + (static_cast<size_t>(ky) * kw + kx) * Ci * Co;
            T* gkc = gk + (static_cast<size_t>(ky) * kw + kx) * Ci * Co;
            for (int ci = 0; ci < Ci; ++ci) {
              const T xv = xc[ci];
              const T* krow = kc + static_cast<size_t>(ci) * Co;
              T* gkrow = gkc + static_cast<size_t>(ci) * Co;
              T s = T(0);
              for (int co = 0; co < Co; ++co) {
                s += g[co] * krow[co];
                gkrow[co] += g[co] * xv;
              }
              gxc[ci] += s;
            }
          }
        }
      }
    }
  };
  return o;
}

template <typename T>
Var<T> Tape<T>::custom(std::string_view name, Shape shape, std::vector<T> values,
                       std::vector<Var<T>> parents,
                       std::function<void(Tape<T>&, Var<T>)> backward) {
  for (Var<T> p : parents) node(p);  // validates handles
  const std::string op = "custom:" + std::string(name);
  Var<T> o = push(op.c_str(), std::move(shape), std::move(values), nullptr);
  if (backward) {
    nodes_[o.id].back = [this, o, backward = std::move(backward)] { backward(*this, o); };
  }
  return o;
}

// ---------------------------------------------------------------- reverse pass

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  const Node& ln = node(loss);
  if (numel(ln.shape) != 1) {
    throw ShapeError("backward: loss must be scalar, got " + shape_str(ln.shape));
  }
  if (backward_done_) {
    throw std::logic_error("backward: called twice on the same tape without reset()");
  }
  backward_done_ = true;
  nodes_[loss.id].grad[0] = T(1);
  for (int32_t i = loss.id; i >= 0; --i) {
    if (nodes_[i].back) nodes_[i].back();
  }
  for (Node& n : nodes_) {
    if (n.bound) {
      T* pg = n.bound->grad.data();
      for (size_t i = 0; i < n.grad.size(); ++i) pg[i] += n.grad[i];
    }
  }
}

template <typename T>
void Tape<T>::reset() {
  for (Node& n : nodes_) std::fill(n.grad.begin(), n.grad.end(), T(0));
  backward_done_ = false;
}

// ------------------------------------------------------------------ grad check

template <typename T>
double grad_check(const std::function<Var<T>(Tape<T>&, Var<T>)>& f,
                  const Shape& shape, std::span<const T> x0, T eps) {
  std::vector<T> base(x0.begin(), x0.end());
  std::vector<T> analytic;
  {
    Tape<T> tape;
    Var<T> x = tape.leaf(shape, base);
    Var<T> loss = f(tape, x);
    tape.backward(loss);
    auto g = tape.grad(x);
    analytic.assign(g.begin(), g.end());
  }
  const auto eval = [&](const std::vector<T>& xv) -> double {
    Tape<T> tape;
    Var<T> x = tape.leaf(shape, xv);
    Var<T> loss = f(tape, x);
    return static_cast<double>(tape.value(loss)[0]);
  };
  double max_rel = 0.0;
  std::vector<T> xv = base;
  for (size_t i = 0; i < xv.size(); ++i) {
    const T orig = xv[i];
    xv[i] = orig + eps;
    const double fp = eval(xv);
    xv[i] = orig - eps;
    const double fm = eval(xv);
    xv[i] = orig;
    const double num = (fp - fm) / (2.0 * static_cast<double>(eps));
    const double ana = static_cast<double>(analytic[i]);
    const double rel = std::abs(ana - num) /
                       std::max({std::abs(ana), std::abs(num), 1e-8});
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

template class Tape<float>;
template class Tape<double>;
template double grad_check<float>(const std::function<Var<float>(Tape<float>&, Var<float>)>&,
                                  const Shape&, std::span<const float>, float);
template double grad_check<double>(const std::function<Var<double>(Tape<double>&, Var<double>)>&,
                                   const Shape&, std::span<const double>, double);

}  // namespace textspot::diff
