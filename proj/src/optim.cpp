#include "apseg/optim.hpp"

#include <cmath>

#include "apseg/errors.hpp"

namespace apseg {

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename T>
Parameter<T>& ParameterSet<T>::add(std::string name, Shape shape, std::vector<T> init) {
  if (shape_numel(shape) != init.size())
    throw DimensionError("parameter " + name + ": shape " + shape_str(shape) + " vs " +
                         std::to_string(init.size()) + " values");
  if (find(name)) throw ContractError("duplicate parameter name " + name);
  auto p = std::make_unique<Parameter<T>>();
  p->name = std::move(name);
  p->shape = std::move(shape);
  p->value = std::move(init);
  p->m.assign(p->value.size(), T(0));
  p->v.assign(p->value.size(), T(0));
  params_.push_back(std::move(p));
  return *params_.back();
}

template <typename T>
Parameter<T>* ParameterSet<T>::find(std::string_view name) {
  for (auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

template <typename T>
const Parameter<T>* ParameterSet<T>::find(std::string_view name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->numel();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : params_) p->grad.clear();
}

template <typename T>
std::uint64_t ParameterSet<T>::checksum() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params_) {
    h = fnv1a(p->name.data(), p->name.size(), h);
    h = fnv1a(p->value.data(), p->value.size() * sizeof(T), h);
  }
  return h;
}

template <typename T>
Tensor<T> Bindings<T>::operator()(Parameter<T>& p) {
  if (auto it = index_.find(&p); it != index_.end()) return bound_[it->second].second;
  auto t = track_ ? Tensor<T>::leaf(p.shape, p.value) : Tensor<T>::constant(p.shape, p.value);
  index_.emplace(&p, bound_.size());
  bound_.emplace_back(&p, t);
  return t;
}

template <typename T>
void Bindings<T>::flush_gradients(T weight) {
  for (auto& [param, leaf] : bound_) {
    if (!leaf.has_grad()) continue;
    if (param->grad.empty()) param->grad.assign(param->numel(), T(0));
    auto g = leaf.grad();
    for (std::size_t i = 0; i < g.size(); ++i) param->grad[i] += weight * g[i];
  }
}

template <typename T>
void adam_step(std::span<Parameter<T>* const> params, const AdamConfig& cfg) {
  for (Parameter<T>* p : params)
    if (!p->has_grad()) throw ContractError("adam_step: parameter " + p->name + " has no gradient");
  for (Parameter<T>* p : params) {
    ++p->step;
    const double t = static_cast<double>(p->step);
    const T c1 = static_cast<T>(1.0 - std::pow(cfg.beta1, t));
    const T c2 = static_cast<T>(1.0 - std::pow(cfg.beta2, t));
    const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
    const T lr = static_cast<T>(cfg.lr), eps = static_cast<T>(cfg.eps);
    for (std::size_t i = 0; i < p->numel(); ++i) {
      const T g = p->grad[i];
      p->m[i] = b1 * p->m[i] + (T(1) - b1) * g;
      p->v[i] = b2 * p->v[i] + (T(1) - b2) * g * g;
      const T mhat = p->m[i] / c1;
      const T vhat = p->v[i] / c2;
      p->value[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    p->grad.clear();
  }
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Bindings<float>;
template class Bindings<double>;
template void adam_step<float>(std::span<Parameter<float>* const>, const AdamConfig&);
template void adam_step<double>(std::span<Parameter<double>* const>, const AdamConfig&);

}  // namespace apseg
