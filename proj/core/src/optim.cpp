#include "phmdiff/optim.hpp"

#include <cmath>

#include "phmdiff/error.hpp"

namespace phmdiff {

Tensor& ParameterSet::add(std::string name, Tensor value) {
  value.set_requires_grad(true);
  names_.push_back(std::move(name));
  tensors_.push_back(std::move(value));
  return tensors_.back();
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.numel();
  return n;
}

const Tensor& ParameterSet::get(const std::string& name) const {
  for (std::size_t i = 0; i < names_.size(); ++i)
    if (names_[i] == name) return tensors_[i];
  throw ContractError("no parameter named '" + name + "'");
}

void ParameterSet::zero_grad() {
  for (auto& t : tensors_) t.zero_grad();
}

std::vector<double> ParameterSet::flatten() const {
  std::vector<double> flat;
  flat.reserve(scalar_count());
  for (const auto& t : tensors_) flat.insert(flat.end(), t.data().begin(), t.data().end());
  return flat;
}

void ParameterSet::assign(const std::vector<double>& flat) {
  if (flat.size() != scalar_count()) {
    throw ContractError("parameter count mismatch: expected " + std::to_string(scalar_count()) + ", got " +
                        std::to_string(flat.size()));
  }
  std::size_t off = 0;
  for (auto& t : tensors_) {
    auto d = t.mutable_data();
    std::copy_n(flat.begin() + off, d.size(), d.begin());
    off += d.size();
  }
}

bool ParameterSet::all_finite() const {
  for (const auto& t : tensors_)
    for (double v : t.data())
      if (!std::isfinite(v)) return false;
  return true;
}

AdamState AdamState::for_params(const ParameterSet& params, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  s.m.assign(params.scalar_count(), 0.0);
  s.v.assign(params.scalar_count(), 0.0);
  return s;
}

void adam_step(ParameterSet& params, AdamState& state) {
  const std::size_t n = params.scalar_count();
  if (state.m.size() != n || state.v.size() != n) {
    throw ContractError("adam_step: moment buffers hold " + std::to_string(state.m.size()) + " values for " +
                        std::to_string(n) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) throw ContractError("adam_step: parameter '" + params.name(i) + "' has no gradient");
  }
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  std::size_t off = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto g = params[i].mutable_grad();
    for (std::size_t k = 0; k < w.size(); ++k, ++off) {
      state.m[off] = state.beta1 * state.m[off] + (1.0 - state.beta1) * g[k];
      state.v[off] = state.beta2 * state.v[off] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = state.m[off] / c1;
      const double vhat = state.v[off] / c2;
      w[k] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
      g[k] = 0.0;
    }
  }
}

}  // namespace phmdiff
