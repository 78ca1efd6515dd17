#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "phmdiff/tensor.hpp"

namespace phmdiff::testing {

// ||g_analytic - g_numeric|| / (||g_analytic|| + ||g_numeric||) over every
// element of `wrt`, using central differences of step h. `f` must read the
// current values of the tensors in `wrt` each time it is called.
double gradient_rel_error(const std::function<Tensor()>& f, const std::vector<Tensor>& wrt, double h = 1e-6);

struct OpGradReport {
  std::string op;
  int cases = 0;
  double max_rel_error = 0.0;
};

// Random-shape finite-difference checks for every differentiable tensor op.
std::vector<OpGradReport> check_all_ops(int cases_per_op, std::uint64_t seed);

}  // namespace phmdiff::testing
