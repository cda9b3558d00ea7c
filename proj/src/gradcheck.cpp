#include "fixformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace fixformer {

GradCheckReport check_param_gradient(const std::string& group, Tensor param,
                                     const std::vector<double>& analytic,
                                     const std::function<double()>& loss_value,
                                     const GradCheckSettings& settings) {
  GradCheckReport report;
  report.group = group;
  const std::size_t n = param.size();
  std::size_t stride = 1;
  if (settings.max_elements_per_group > 0 && n > settings.max_elements_per_group) {
    stride = (n + settings.max_elements_per_group - 1) / settings.max_elements_per_group;
  }
  const bool corrupt =
      !settings.corrupt_group.empty() && group.find(settings.corrupt_group) != std::string::npos;
  auto& data = param.data();
  for (std::size_t i = 0; i < n; i += stride) {
    const double saved = data[i];
    data[i] = saved + settings.step;
    const double up = loss_value();
    data[i] = saved - settings.step;
    const double down = loss_value();
    data[i] = saved;
    const double fd = (up - down) / (2.0 * settings.step);
    double a = analytic.empty() ? 0.0 : analytic[i];
    if (corrupt) a += 0.05;
    const double rel = std::abs(a - fd) / std::max(std::abs(a) + std::abs(fd), 1e-6);
    report.max_rel_err = std::max(report.max_rel_err, rel);
    ++report.elements_checked;
  }
  report.passed = report.max_rel_err < settings.tolerance;
  return report;
}

std::vector<GradCheckReport> gradcheck_all(const std::vector<NamedParam>& params,
                                           const std::function<double()>& loss_value,
                                           const std::function<void()>& populate_gradients,
                                           const GradCheckSettings& settings) {
  for (const NamedParam& p : params) p.tensor.impl()->grad.clear();
  populate_gradients();
  std::vector<GradCheckReport> reports;
  reports.reserve(params.size());
  for (const NamedParam& p : params) {
    std::vector<double> analytic =
        p.tensor.has_grad() ? p.tensor.grad() : std::vector<double>{};
    reports.push_back(
        check_param_gradient(p.name, p.tensor, analytic, loss_value, settings));
  }
  return reports;
}

}  // namespace fixformer
