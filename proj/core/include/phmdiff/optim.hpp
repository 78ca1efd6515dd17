#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phmdiff/tensor.hpp"

namespace phmdiff {

// Ordered collection of named trainable tensors. Order is the flattening
// order used by the optimizer and by checkpoints.
class ParameterSet {
 public:
  Tensor& add(std::string name, Tensor value);

  std::size_t size() const { return tensors_.size(); }
  std::size_t scalar_count() const;
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  const std::string& name(std::size_t i) const { return names_[i]; }
  const Tensor& get(const std::string& name) const;

  // Allocates (or resets) every gradient buffer to zeros.
  void zero_grad();
  std::vector<double> flatten() const;
  void assign(const std::vector<double>& flat);
  bool all_finite() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

struct AdamState {
  std::uint64_t step_count = 0;
  std::vector<double> m;
  std::vector<double> v;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  static AdamState for_params(const ParameterSet& params, double learning_rate);
};

// Bias-corrected Adam update; zeroes the gradients afterwards.
void adam_step(ParameterSet& params, AdamState& state);

}  // namespace phmdiff
