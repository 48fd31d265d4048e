#include "textspot/params.hpp"

#include <cmath>
#include <stdexcept>

namespace textspot::diff {

template <typename T>
Parameter<T>& ParameterStore<T>::create(const std::string& name, Shape shape) {
  if (index_.count(name)) {
    throw std::invalid_argument("ParameterStore: duplicate parameter '" + name + "'");
  }
  auto p = std::make_unique<Parameter<T>>();
  p->name = name;
  p->shape = std::move(shape);
  const int64_t n = numel(p->shape);
  p->value.assign(n, T(0));
  p->grad.assign(n, T(0));
  index_[name] = params_.size();
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
Parameter<T>* ParameterStore<T>::find(const std::string& name) {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

template <typename T>
const Parameter<T>* ParameterStore<T>::find(const std::string& name) const {
  auto it = index_.find(name);
  return it == index_.end() ? nullptr : params_[it->second].get();
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

template <typename T>
int64_t ParameterStore<T>::total_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p->count();
  return n;
}

template <typename T>
void fill_constant(Parameter<T>& p, T v) {
  std::fill(p.value.begin(), p.value.end(), v);
}

template <typename T>
void fill_uniform(Parameter<T>& p, T lo, T hi, Rng& rng) {
  for (T& x : p.value) x = static_cast<T>(rng.uniform(lo, hi));
}

template <typename T>
void fill_kaiming_uniform(Parameter<T>& p, int fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / std::max(fan_in, 1));
  for (T& x : p.value) x = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
AdamW<T>::AdamW(AdamWConfig cfg) : cfg_(cfg) {
  if (!(cfg.lr > 0.0)) {
    throw std::invalid_argument("AdamW: learning rate must be positive");
  }
}

template <typename T>
void AdamW<T>::step(ParameterStore<T>& store) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& pp : store.all()) {
    Parameter<T>& p = *pp;
    if (p.m.empty()) {
      p.m.assign(p.value.size(), T(0));
      p.v.assign(p.value.size(), T(0));
    }
    const double lr = cfg_.lr * p.lr_mult;
    for (size_t i = 0; i < p.value.size(); ++i) {
      const double g = static_cast<double>(p.grad[i]);
      const double m = cfg_.beta1 * static_cast<double>(p.m[i]) + (1.0 - cfg_.beta1) * g;
      const double v = cfg_.beta2 * static_cast<double>(p.v[i]) + (1.0 - cfg_.beta2) * g * g;
      p.m[i] = static_cast<T>(m);
      p.v[i] = static_cast<T>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      double x = static_cast<double>(p.value[i]);
      x -= lr * (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * x);
      p.value[i] = static_cast<T>(x);
    }
  }
}

template struct Parameter<float>;
template struct Parameter<double>;
template class ParameterStore<float>;
template class ParameterStore<double>;
template class AdamW<float>;
template class AdamW<double>;
template void fill_constant<float>(Parameter<float>&, float);
template void fill_constant<double>(Parameter<double>&, double);
template void fill_uniform<float>(Parameter<float>&, float, float, Rng&);
template void fill_uniform<double>(Parameter<double>&, double, double, Rng&);
template void fill_kaiming_uniform<float>(Parameter<float>&, int, Rng&);
template void fill_kaiming_uniform<double>(Parameter<double>&, int, Rng&);

}  // namespace textspot::diff
