#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "textspot/autograd.hpp"
#include "textspot/rng.hpp"

namespace textspot::diff {

/// Persistent trainable buffer. Gradients accumulate across tapes until
/// zero_grad(); m/v are the optimizer moments, sized lazily.
template <typename T>
struct Parameter {
  std::string name;
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  std::vector<T> m, v;
  double lr_mult = 1.0;

  int64_t count() const { return static_cast<int64_t>(value.size()); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
class ParameterStore {
 public:
  Parameter<T>& create(const std::string& name, Shape shape);
  Parameter<T>* find(const std::string& name);
  const Parameter<T>* find(const std::string& name) const;

  std::vector<std::unique_ptr<Parameter<T>>>& all() { return params_; }
  const std::vector<std::unique_ptr<Parameter<T>>>& all() const { return params_; }

  void zero_grad();
  int64_t total_count() const;

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, size_t> index_;
};

template <typename T>
void fill_constant(Parameter<T>& p, T v);
template <typename T>
void fill_uniform(Parameter<T>& p, T lo, T hi, Rng& rng);
/// U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
template <typename T>
void fill_kaiming_uniform(Parameter<T>& p, int fan_in, Rng& rng);

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled weight decay Adam with bias correction. Per-parameter learning
/// rate multipliers come from Parameter::lr_mult.
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg);
  void step(ParameterStore<T>& store);
  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  int64_t t_ = 0;
};

}  // namespace textspot::diff
