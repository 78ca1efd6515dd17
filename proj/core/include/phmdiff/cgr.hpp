#pragma once

#include <vector>

#include "phmdiff/tensor.hpp"

namespace phmdiff {

// Mixture of Gaussian RBF kernels, k(x, y) = sum_k exp(-|x - y|^2 / (2 h_k^2)).
// With `median_heuristic`, h_k = multipliers[k] * median pairwise distance of the
// pooled samples (recomputed per call, no gradient through the bandwidth);
// otherwise h_k = bandwidths[k].
struct KernelSpec {
  std::vector<double> multipliers{0.5, 1.0, 2.0, 4.0};
  std::vector<double> bandwidths;
  bool median_heuristic = true;

  std::size_t size() const { return median_heuristic ? multipliers.size() : bandwidths.size(); }
  void validate() const;

  static KernelSpec fixed(std::vector<double> bandwidths);
};

// Bandwidths actually used for samples a and b.
std::vector<double> resolve_bandwidths(const Tensor& a, const Tensor& b, const KernelSpec& spec);

Tensor rbf_kernel_gram(const Tensor& a, const Tensor& b, const KernelSpec& spec);
Tensor rbf_kernel_gram(const Tensor& a, const Tensor& b, const std::vector<double>& bandwidths);

// Biased (V-statistic) MMD^2 = mean K_aa - 2 mean K_ab + mean K_bb.
Tensor mmd2(const Tensor& a, const Tensor& b, const KernelSpec& spec);

struct GranularityLossReport {
  std::vector<Tensor> per_level;  // differentiable MMD^2 per pyramid level, fine -> coarse
  std::vector<double> values;     // the same numbers as plain doubles
  Tensor combined;                // lambda * sum of per-level values
  double combined_value = 0.0;
  double lambda = 0.0;
};

// Each entry is a [n_l, d_l] batch of flattened noise vectors for one level.
GranularityLossReport cgr_loss(const std::vector<Tensor>& eps_hat_per_level,
                               const std::vector<Tensor>& eps_true_per_level, const KernelSpec& spec, double lambda);

}  // namespace phmdiff
