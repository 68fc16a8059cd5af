#pragma once

#include <functional>
#include <string>
#include <vector>

#include "longstory/tensor.hpp"

namespace longstory::nn {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
  double tolerance = 0.0;

  std::string to_string() const;
};

/// Central finite-difference check of d(loss)/d(param) against the tape.
/// loss_fn must rebuild the graph from the parameters' current values on
/// every call. Relative error is |analytic - numeric| / max(1, |numeric|).
/// max_elements (0 = all) caps the number of elements probed per parameter,
/// chosen deterministically with a fixed stride.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn,
                           const std::vector<Parameter>& params, double epsilon,
                           double tolerance, std::size_t max_elements = 0);

}  // namespace longstory::nn
