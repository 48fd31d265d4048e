#include "textspot/ctc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace textspot::match {

namespace {

template <typename T>
constexpr T kLogZero = -std::numeric_limits<T>::infinity();

template <typename T>
inline T log_add(T a, T b) {
  if (a == kLogZero<T>) return b;
  if (b == kLogZero<T>) return a;
  return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

// Blank-extended label: blank, l1, blank, l2, ..., blank.
std::vector<int> extend(const std::vector<int>& label) {
  std::vector<int> ext(2 * label.size() + 1, 0);
  for (size_t i = 0; i < label.size(); ++i) ext[2 * i + 1] = label[i];
  return ext;
}

}  // namespace

int ctc_min_frames(const std::vector<int>& label) {
  int frames = static_cast<int>(label.size());
  for (size_t i = 1; i < label.size(); ++i) {
    if (label[i] == label[i - 1]) ++frames;
  }
  return frames;
}

bool ctc_feasible(const std::vector<int>& label, int n_frames) {
  return ctc_min_frames(label) <= n_frames;
}

namespace {

template <typename T>
void forward_alphas(const T* lp, int N, int V1, const std::vector<int>& ext,
                    std::vector<T>& alpha) {
  const int M = static_cast<int>(ext.size());
  alpha.assign(static_cast<size_t>(N) * M, kLogZero<T>);
  alpha[0] = lp[ext[0]];
  if (M > 1) alpha[1] = lp[ext[1]];
  for (int t = 1; t < N; ++t) {
    const T* row = lp + static_cast<size_t>(t) * V1;
    T* at = alpha.data() + static_cast<size_t>(t) * M;
    const T* ap = alpha.data() + static_cast<size_t>(t - 1) * M;
    for (int s = 0; s < M; ++s) {
      T acc = ap[s];
      if (s >= 1) acc = log_add(acc, ap[s - 1]);
      if (s >= 2 && ext[s] != 0 && ext[s] != ext[s - 2]) acc = log_add(acc, ap[s - 2]);
      at[s] = acc == kLogZero<T> ? kLogZero<T> : acc + row[ext[s]];
    }
  }
}

}  // namespace

template <typename T>
T ctc_nll(const T* log_probs, int n_frames, int n_classes,
          const std::vector<int>& label) {
  for (int c : label) {
    if (c < 1 || c >= n_classes) {
      throw std::invalid_argument("ctc_nll: label class " + std::to_string(c) +
                                  " outside 1.." + std::to_string(n_classes - 1));
    }
  }
  if (!ctc_feasible(label, n_frames)) {
    throw CtcInfeasibleError("ctc_nll: label needs " +
                             std::to_string(ctc_min_frames(label)) +
                             " frames, only " + std::to_string(n_frames) +
                             " available");
  }
  const std::vector<int> ext = extend(label);
  std::vector<T> alpha;
  forward_alphas(log_probs, n_frames, n_classes, ext, alpha);
  const int M = static_cast<int>(ext.size());
  const T* last = alpha.data() + static_cast<size_t>(n_frames - 1) * M;
  T logp = last[M - 1];
  if (M > 1) logp = log_add(logp, last[M - 2]);
  return -logp;
}

template <typename T>
T ctc_nll_grad(const T* log_probs, int n_frames, int n_classes,
               const std::vector<int>& label, T* grad_out, T scale) {
  if (!ctc_feasible(label, n_frames)) {
    throw CtcInfeasibleError("ctc_nll_grad: infeasible label");
  }
  const std::vector<int> ext = extend(label);
  const int M = static_cast<int>(ext.size());
  const int N = n_frames, V1 = n_classes;
  std::vector<T> alpha;
  forward_alphas(log_probs, N, V1, ext, alpha);

  // beta[t][s]: log-prob of completing the suffix after emitting at time t.
  std::vector<T> beta(static_cast<size_t>(N) * M, kLogZero<T>);
  T* blast = beta.data() + static_cast<size_t>(N - 1) * M;
  blast[M - 1] = T(0);
  if (M > 1) blast[M - 2] = T(0);
  for (int t = N - 2; t >= 0; --t) {
    const T* row_next = log_probs + static_cast<size_t>(t + 1) * V1;
    T* bt = beta.data() + static_cast<size_t>(t) * M;
    const T* bn = beta.data() + static_cast<size_t>(t + 1) * M;
    for (int s = 0; s < M; ++s) {
      T acc = bn[s] == kLogZero<T> ? kLogZero<T> : bn[s] + row_next[ext[s]];
      if (s + 1 < M && bn[s + 1] != kLogZero<T>)
        acc = log_add(acc, bn[s + 1] + row_next[ext[s + 1]]);
      if (s + 2 < M && ext[s + 2] != 0 && ext[s + 2] != ext[s] &&
          bn[s + 2] != kLogZero<T>)
        acc = log_add(acc, bn[s + 2] + row_next[ext[s + 2]]);
      bt[s] = acc;
    }
  }

  const T* alast = alpha.data() + static_cast<size_t>(N - 1) * M;
  T logp = alast[M - 1];
  if (M > 1) logp = log_add(logp, alast[M - 2]);

  // d(-logP)/d logp[t][c] = -sum_{s: ext[s]=c} exp(alpha[t][s]+beta[t][s]-logP)
  for (int t = 0; t < N; ++t) {
    const T* at = alpha.data() + static_cast<size_t>(t) * M;
    const T* bt = beta.data() + static_cast<size_t>(t) * M;
    T* g = grad_out + static_cast<size_t>(t) * V1;
    for (int s = 0; s < M; ++s) {
      if (at[s] == kLogZero<T> || bt[s] == kLogZero<T>) continue;
      g[ext[s]] -= scale * std::exp(at[s] + bt[s] - logp);
    }
  }
  return -logp;
}

template <typename T>
diff::Var<T> ctc_loss_node(diff::Tape<T>& tape, diff::Var<T> log_probs,
                           std::vector<int> label) {
  const diff::Shape& s = tape.shape(log_probs);
  if (s.size() != 2) {
    throw diff::ShapeError("ctc_loss_node: log_probs must be [N,V+1], got " +
                           diff::shape_str(s));
  }
  const int N = s[0], V1 = s[1];
  const T nll = ctc_nll(tape.value(log_probs).data(), N, V1, label);
  return tape.custom(
      "ctc_loss", {1}, {nll}, {log_probs},
      [log_probs, N, V1, label = std::move(label)](diff::Tape<T>& tp,
                                                   diff::Var<T> out) {
        const T upstream = tp.grad(out)[0];
        if (upstream == T(0)) return;
        ctc_nll_grad(tp.value(log_probs).data(), N, V1, label,
                     tp.grad_mut(log_probs).data(), upstream);
      });
}

template <typename T>
std::vector<int> ctc_greedy_decode(const T* scores, int n_frames, int n_classes) {
  std::vector<int> out;
  int prev = 0;
  for (int t = 0; t < n_frames; ++t) {
    const T* row = scores + static_cast<size_t>(t) * n_classes;
    int best = 0;
    for (int c = 1; c < n_classes; ++c) {
      if (row[c] > row[best]) best = c;
    }
    if (best != 0 && best != prev) out.push_back(best);
    prev = best;
  }
  return out;
}

template float ctc_nll<float>(const float*, int, int, const std::vector<int>&);
template double ctc_nll<double>(const double*, int, int, const std::vector<int>&);
template float ctc_nll_grad<float>(const float*, int, int, const std::vector<int>&, float*, float);
template double ctc_nll_grad<double>(const double*, int, int, const std::vector<int>&, double*, double);
template diff::Var<float> ctc_loss_node<float>(diff::Tape<float>&, diff::Var<float>, std::vector<int>);
template diff::Var<double> ctc_loss_node<double>(diff::Tape<double>&, diff::Var<double>, std::vector<int>);
template std::vector<int> ctc_greedy_decode<float>(const float*, int, int);
template std::vector<int> ctc_greedy_decode<double>(const double*, int, int);

}  // namespace textspot::match
