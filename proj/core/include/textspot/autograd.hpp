#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace textspot::diff {

using Shape = std::vector<int>;

int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

/// Raised on malformed op inputs; the message names the op and the shapes.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
/// Raised when a forward op produces NaN/Inf while finite checks are on.
struct NonFiniteError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename T>
struct Parameter;

/// Handle to a node on a tape. Only meaningful together with the tape that
/// created it.
template <typename T>
struct Var {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

/// Feature-map level layout for the fused multi-scale attention op: rows
/// [start, start + h*w) of the value matrix hold level (h, w) row-major.
struct LevelSpec {
  int h = 0;
  int w = 0;
  int start = 0;
};

/// Reverse-mode tape. Nodes are recorded in construction order, which is a
/// topological order by construction; backward() replays them in reverse.
/// Single-threaded by contract; run independent tapes on separate threads.
template <typename T>
class Tape {
 public:
  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // ----- node construction -----
  Var<T> leaf(Shape shape, std::vector<T> values);
  Var<T> constant(Shape shape, std::vector<T> values) { return leaf(std::move(shape), std::move(values)); }
  Var<T> scalar(T v) { return leaf({1}, {v}); }
  Var<T> zeros(Shape shape);
  /// Leaf that mirrors a persistent parameter; backward() accumulates the
  /// node's gradient into p.grad.
  Var<T> param(Parameter<T>& p);

  // ----- access -----
  const Shape& shape(Var<T> v) const { return node(v).shape; }
  int64_t size(Var<T> v) const { return static_cast<int64_t>(node(v).val.size()); }
  std::span<const T> value(Var<T> v) const { return node(v).val; }
  std::span<const T> grad(Var<T> v) const { return node(v).grad; }
  std::span<T> grad_mut(Var<T> v) { return node(v).grad; }
  size_t num_nodes() const { return nodes_.size(); }

  // ----- elementwise / scalar -----
  Var<T> add(Var<T> a, Var<T> b);  // equal shapes, or b's shape a suffix of a's
  Var<T> sub(Var<T> a, Var<T> b);
  Var<T> mul(Var<T> a, Var<T> b);  // same broadcast rule as add
  Var<T> scale(Var<T> a, T c);
  Var<T> add_const(Var<T> a, T c);
  Var<T> relu(Var<T> a);
  Var<T> sigmoid(Var<T> a);
  /// Inverse sigmoid; inputs clamped to [eps, 1-eps] at the boundary.
  Var<T> logit(Var<T> a, T eps = T(1e-3));
  Var<T> exp(Var<T> a);
  Var<T> log(Var<T> a);
  Var<T> abs(Var<T> a);
  Var<T> pow_const(Var<T> a, T p);
  Var<T> clamp(Var<T> a, T lo, T hi);

  // ----- linear algebra -----
  Var<T> matmul(Var<T> a, Var<T> b);  // [m,k] x [k,n]
  Var<T> bmm(Var<T> a, Var<T> b);     // [B,m,k] x [B,k,n]
  Var<T> bmm_nt(Var<T> a, Var<T> b);  // [B,m,k] x [B,n,k]^T -> [B,m,n]

  // ----- shape manipulation -----
  Var<T> reshape(Var<T> a, Shape s);
  Var<T> transpose(Var<T> a);                       // 2-D
  Var<T> permute(Var<T> a, const std::vector<int>& perm);
  Var<T> concat(const std::vector<Var<T>>& xs, int axis);
  Var<T> gather_rows(Var<T> a, std::vector<int> idx);  // first axis; repeats allowed
  Var<T> slice_rows(Var<T> a, int begin, int end);
  Var<T> slice_last(Var<T> a, int begin, int end);  // last axis

  // ----- normalization / reductions -----
  Var<T> softmax(Var<T> a);      // last axis
  Var<T> log_softmax(Var<T> a);  // last axis
  Var<T> layer_norm(Var<T> a, Var<T> gamma, Var<T> beta, T eps = T(1e-5));
  Var<T> sum_all(Var<T> a);
  Var<T> mean_all(Var<T> a);
  Var<T> sum_last(Var<T> a);
  Var<T> mean_last(Var<T> a);

  // ----- domain ops -----
  /// Sinusoidal encoding of normalized 2-D coordinates: [m,2] -> [m,dims],
  /// x frequencies in the first half, y in the second. dims % 4 == 0.
  Var<T> sinusoidal_encode(Var<T> coords, int dims, T temperature = T(10000));
  /// Feature map [H,W,C] sampled at normalized locations [m,2] (or [2]) with
  /// zero padding outside; differentiable in both features and locations.
  Var<T> bilinear_sample(Var<T> fmap, Var<T> loc);
  /// Fused multi-scale deformable aggregation. value [P,d] split into
  /// `heads` column groups; loc [Q,S,2] normalized per level; weight [Q,S]
  /// where S = heads * levels * points laid out head-major.
  Var<T> ms_deform_attend(Var<T> value, const std::vector<LevelSpec>& levels,
                          Var<T> loc, Var<T> weight, int heads, int points);
  /// x [H,W,Cin], kernel [kh,kw,Cin,Cout], zero padding.
  Var<T> conv2d(Var<T> x, Var<T> kernel, int stride, int pad);

  /// Extension point for custom ops: the caller supplies the forward value
  /// and a backward functor that reads grad(out) and accumulates into the
  /// parents via grad_mut().
  Var<T> custom(std::string_view name, Shape shape, std::vector<T> values,
                std::vector<Var<T>> parents,
                std::function<void(Tape<T>&, Var<T>)> backward);

  // ----- reverse pass -----
  /// Accumulates d(loss)/dx into every node's grad and into bound
  /// parameters. loss must be scalar. A second call without reset() throws.
  void backward(Var<T> loss);
  /// Zeroes all node gradients and re-arms backward().
  void reset();

  bool check_finite() const { return check_finite_; }

 private:
  struct Node {
    Shape shape;
    std::vector<T> val;
    std::vector<T> grad;
    std::function<void()> back;  // nullptr for leaves
    Parameter<T>* bound = nullptr;
  };

  Node& node(Var<T> v) {
    if (!v.valid() || v.id >= static_cast<int32_t>(nodes_.size()))
      throw std::runtime_error("Tape: invalid Var handle");
    return nodes_[v.id];
  }
  const Node& node(Var<T> v) const {
    return const_cast<Tape*>(this)->node(v);
  }

  Var<T> push(const char* op, Shape shape, std::vector<T> val,
              std::function<void()> back);
  void require(bool cond, const char* op, const std::string& detail) const;

  std::vector<Node> nodes_;
  bool check_finite_ = true;
  bool backward_done_ = false;
};

/// Central finite differences against the tape gradient. `f` must be a pure
/// function building a scalar loss from the input leaf. Returns the maximum
/// relative error |a - n| / max(|a|, |n|, 1e-8) over all coordinates.
template <typename T>
double grad_check(const std::function<Var<T>(Tape<T>&, Var<T>)>& f,
                  const Shape& shape, std::span<const T> x0, T eps = T(1e-5));

}  // namespace textspot::diff
