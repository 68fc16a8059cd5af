#include "longstory/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace longstory::nn {

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<Parameter>& params, double epsilon,
                           double tolerance, std::size_t max_elements) {
  for (const auto& p : params) p.tensor.zero_grad();
  Tensor loss = loss_fn();
  backward(loss);

  GradCheckReport report;
  report.tolerance = tolerance;
  for (const auto& p : params) {
    GradCheckEntry entry;
    entry.name = p.name;
    std::vector<double>& value = p.tensor.value();
    const std::vector<double>& grad = p.tensor.grad();
    const std::size_t n = value.size();
    std::size_t stride = 1;
    if (max_elements > 0 && n > max_elements) stride = (n + max_elements - 1) / max_elements;
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = value[i];
      value[i] = saved + epsilon;
      const double up = loss_fn().item();
      value[i] = saved - epsilon;
      const double down = loss_fn().item();
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double analytic = grad[i];
      const double rel = std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
      if (rel > entry.max_rel_error) {
        entry.max_rel_error = rel;
        entry.worst_index = i;
        entry.analytic = analytic;
        entry.numeric = numeric;
      }
      ++entry.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < tolerance;
  return report;
}

std::string GradCheckReport::to_string() const {
  std::ostringstream os;
  os.precision(6);
  for (const auto& e : entries) {
    os << (e.max_rel_error < tolerance ? "ok   " : "FAIL ") << e.name << "  max_rel="
       << e.max_rel_error << "  (analytic=" << e.analytic << " numeric=" << e.numeric << " at "
       << e.worst_index << ", " << e.checked << " elems)\n";
  }
  os << (passed ? "PASSED" : "FAILED") << "  max_rel_error=" << max_rel_error
     << "  tolerance=" << tolerance << "\n";
  return os.str();
}

}  // namespace longstory::nn
