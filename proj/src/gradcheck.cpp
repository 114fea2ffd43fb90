#include "ilaprop/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace ilaprop {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  const double v = f().item();
  if (!std::isfinite(v)) throw std::runtime_error("gradient check: f is not finite");
  return v;
}

}  // namespace

GradCheckReport finite_diff_report(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                                   double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw std::invalid_argument("gradient check: eps must lie in [1e-7, 1e-3], got " +
                                std::to_string(eps));
  }
  for (auto& leaf : leaves) {
    if (!leaf.requires_grad()) {
      throw std::invalid_argument("gradient check: every leaf must require grad");
    }
    leaf.zero_grad();
  }
  backward(f());

  std::vector<std::vector<double>> analytic;
  for (auto& leaf : leaves) {
    if (leaf.has_grad()) {
      analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    } else {
      analytic.emplace_back(leaf.numel(), 0.0);
    }
  }

  GradCheckReport report;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto values = leaves[l].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = evaluate(f);
      values[i] = saved - eps;
      const double down = evaluate(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[l][i];
      const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
      const double rel = std::fabs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_relative_error || report.checked == 1) {
        report.max_relative_error = rel;
        report.worst_leaf = l;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

double finite_diff_check(const std::function<Tensor()>& f, std::span<Tensor> leaves,
                         double eps) {
  return finite_diff_report(f, leaves, eps).max_relative_error;
}

}  // namespace ilaprop
