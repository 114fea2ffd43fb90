#pragma once

#include <cstddef>
#include <functional>
#include <span>

#include "ilaprop/tensor.hpp"

namespace ilaprop {

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients of the scalar `f` against central
/// differences (f(x + eps) - f(x - eps)) / (2 eps) for every element of every
/// leaf. Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
///
/// `f` must rebuild its graph from the leaves on every call and be
/// deterministic. Leaf gradients are overwritten.
GradCheckReport finite_diff_report(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                                   double eps);

double finite_diff_check(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                         double eps);

}  // namespace ilaprop
