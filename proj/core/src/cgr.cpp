#include "phmdiff/cgr.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "phmdiff/error.hpp"

namespace phmdiff {

void KernelSpec::validate() const {
  const auto& v = median_heuristic ? multipliers : bandwidths;
  if (v.empty()) throw ConfigError("kernel spec needs at least one bandwidth");
  for (double h : v)
    if (!(h > 0.0)) throw ConfigError("kernel bandwidths must be positive");
}

KernelSpec KernelSpec::fixed(std::vector<double> bandwidths) {
  KernelSpec s;
  s.median_heuristic = false;
  s.bandwidths = std::move(bandwidths);
  return s;
}

namespace {

void check_pair(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw ShapeError(std::string(op) + ": expected [n, d] and [m, d] samples, got " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
}

}  // namespace

std::vector<double> resolve_bandwidths(const Tensor& a, const Tensor& b, const KernelSpec& spec) {
  spec.validate();
  if (!spec.median_heuristic) return spec.bandwidths;
  check_pair(a, b, "resolve_bandwidths");
  const std::int64_t n = a.dim(0), m = b.dim(0), d = a.dim(1);
  std::vector<const double*> rows;
  for (std::int64_t i = 0; i < n; ++i) rows.push_back(a.data().data() + i * d);
  for (std::int64_t i = 0; i < m; ++i) rows.push_back(b.data().data() + i * d);
  std::vector<double> dist;
  dist.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      double acc = 0.0;
      for (std::int64_t k = 0; k < d; ++k) acc += (rows[i][k] - rows[j][k]) * (rows[i][k] - rows[j][k]);
      dist.push_back(std::sqrt(acc));
    }
  double median = 1.0;
  if (!dist.empty()) {
    auto mid = dist.begin() + static_cast<std::ptrdiff_t>(dist.size() / 2);
    std::nth_element(dist.begin(), mid, dist.end());
    median = *mid;
  }
  if (!(median > 1e-12)) median = 1.0;  // all samples coincide
  std::vector<double> h;
  for (double mult : spec.multipliers) h.push_back(mult * median);
  return h;
}

Tensor rbf_kernel_gram(const Tensor& a, const Tensor& b, const std::vector<double>& bandwidths) {
  check_pair(a, b, "rbf_kernel_gram");
  const Tensor d2 = pairwise_sq_dist(a, b);
  Tensor gram;
  for (double h : bandwidths) {
    const Tensor k = exp(scale(d2, -1.0 / (2.0 * h * h)));
    gram = gram.defined() ? add(gram, k) : k;
  }
  return gram;
}

Tensor rbf_kernel_gram(const Tensor& a, const Tensor& b, const KernelSpec& spec) {
  return rbf_kernel_gram(a, b, resolve_bandwidths(a, b, spec));
}

Tensor mmd2(const Tensor& a, const Tensor& b, const KernelSpec& spec) {
  check_pair(a, b, "mmd2");
  if (a.dim(0) < 1 || b.dim(0) < 1) throw ContractError("mmd2 needs at least one sample on each side");
  // evaluate in a canonical argument order so that mmd2(a, b) and mmd2(b, a) agree bit for bit
  const bool swap = std::lexicographical_compare(b.data().begin(), b.data().end(), a.data().begin(), a.data().end());
  const Tensor& x = swap ? b : a;
  const Tensor& y = swap ? a : b;
  const auto h = resolve_bandwidths(x, y, spec);
  const Tensor kxx = mean(rbf_kernel_gram(x, x, h));
  const Tensor kxy = mean(rbf_kernel_gram(x, y, h));
  const Tensor kyy = mean(rbf_kernel_gram(y, y, h));
  return sub(add(kxx, kyy), scale(kxy, 2.0));
}

GranularityLossReport cgr_loss(const std::vector<Tensor>& eps_hat_per_level,
                               const std::vector<Tensor>& eps_true_per_level, const KernelSpec& spec, double lambda) {
  if (eps_hat_per_level.size() != eps_true_per_level.size()) {
    throw ContractError("cgr_loss: " + std::to_string(eps_hat_per_level.size()) + " predicted levels vs " +
                        std::to_string(eps_true_per_level.size()) + " reference levels");
  }
  if (eps_hat_per_level.empty()) throw ContractError("cgr_loss: no levels");
  GranularityLossReport report;
  report.lambda = lambda;
  Tensor total;
  for (std::size_t l = 0; l < eps_hat_per_level.size(); ++l) {
    Tensor v = mmd2(eps_hat_per_level[l], eps_true_per_level[l], spec);
    report.values.push_back(v.item());
    total = total.defined() ? add(total, v) : v;
    report.per_level.push_back(std::move(v));
  }
  report.combined = scale(total, lambda);
  report.combined_value = report.combined.item();
  return report;
}

}  // namespace phmdiff
