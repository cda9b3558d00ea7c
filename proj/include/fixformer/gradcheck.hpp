#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fixformer/tensor.hpp"

namespace fixformer {

struct GradCheckReport {
  std::string group;
  std::size_t elements_checked = 0;
  double max_rel_err = 0.0;
  bool passed = false;
};

struct GradCheckSettings {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Elements checked per parameter tensor; 0 means all. Larger tensors are
  // sampled on a deterministic stride so coverage spans the whole group.
  std::size_t max_elements_per_group = 0;
  // Test hook: additive corruption applied to the analytic gradient of any
  // group whose name contains this substring. Forces a visible failure.
  std::string corrupt_group;
};

// Central-difference check of d(loss)/d(param) for one parameter tensor.
// loss_value must rebuild the forward pass from current parameter data and
// return the scalar loss; analytic holds the gradients populated by one
// backward pass over the same loss. Relative error uses
// |a - fd| / max(|a| + |fd|, 1e-6).
GradCheckReport check_param_gradient(const std::string& group, Tensor param,
                                     const std::vector<double>& analytic,
                                     const std::function<double()>& loss_value,
                                     const GradCheckSettings& settings);

// Full harness: runs forward+backward once via make_loss (which must build
// its own tape and return the loss AFTER backward has populated gradients),
// then central-differences every listed (name, tensor) group.
struct NamedParam {
  std::string name;
  Tensor tensor;
};

std::vector<GradCheckReport> gradcheck_all(
    const std::vector<NamedParam>& params,
    const std::function<double()>& loss_value,
    const std::function<void()>& populate_gradients,
    const GradCheckSettings& settings);

}  // namespace fixformer
