#pragma once

#include <stdexcept>
#include <vector>

#include "textspot/autograd.hpp"

namespace textspot::match {

/// Raised when a label cannot be aligned within the available frames.
struct CtcInfeasibleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Minimum frame count for a label under CTC rules: length plus one extra
/// frame per adjacent repeat (a blank must separate equal neighbors).
int ctc_min_frames(const std::vector<int>& label);
bool ctc_feasible(const std::vector<int>& label, int n_frames);

/// Negative log likelihood of `label` under per-frame log distributions.
/// log_probs is row-major [N, V+1]; class 0 is the blank, labels use 1..V.
/// Standard forward DP over the blank-extended label in log space.
template <typename T>
T ctc_nll(const T* log_probs, int n_frames, int n_classes,
          const std::vector<int>& label);

/// NLL plus d(nll)/d(log_probs) via the alpha/beta posterior; the gradient
/// is accumulated (scaled by `scale`) into grad_out [N, V+1].
template <typename T>
T ctc_nll_grad(const T* log_probs, int n_frames, int n_classes,
               const std::vector<int>& label, T* grad_out, T scale);

/// Tape node for the CTC loss: scalar output differentiable w.r.t. the
/// [N, V+1] log-probability input.
template <typename T>
diff::Var<T> ctc_loss_node(diff::Tape<T>& tape, diff::Var<T> log_probs,
                           std::vector<int> label);

/// Greedy decode: per-frame argmax, collapse repeats, drop blanks.
template <typename T>
std::vector<int> ctc_greedy_decode(const T* scores, int n_frames, int n_classes);

}  // namespace textspot::match
