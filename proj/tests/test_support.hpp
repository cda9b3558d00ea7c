#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "fixformer/gradcheck.hpp"
#include "fixformer/ops.hpp"
#include "fixformer/tensor.hpp"

namespace testsup {

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline fixformer::Tensor random_tensor(fixformer::Shape shape, std::mt19937_64& r,
                                       double lo = -1.0, double hi = 1.0,
                                       bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  std::vector<double> v(n);
  for (double& x : v) x = dist(r);
  return fixformer::Tensor(std::move(shape), std::move(v), requires_grad);
}

// Checks every input gradient of a tensor op by central differences against
// a weighted-sum scalar loss. forward must rebuild the op from the inputs'
// current data each call.
inline double check_op_gradients(const std::function<fixformer::Tensor()>& forward,
                                 std::vector<fixformer::Tensor> inputs,
                                 std::uint64_t weight_seed = 99) {
  using namespace fixformer;
  for (Tensor& t : inputs) t.set_requires_grad(true);
  Tensor probe = forward();
  auto r = rng(weight_seed);
  Tensor w = random_tensor(probe.shape(), r, -1.0, 1.0);
  auto loss_value = [&]() -> double { return sum_all(mul(forward(), w)).value(); };
  auto populate = [&]() {
    for (Tensor& t : inputs) t.zero_grad();
    GradTape tape;
    TapeScope scope(tape);
    Tensor loss = sum_all(mul(forward(), w));
    tape.backward(loss);
  };
  populate();
  double worst = 0.0;
  GradCheckSettings settings;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    std::vector<double> analytic =
        inputs[i].has_grad() ? inputs[i].grad() : std::vector<double>{};
    auto rep = check_param_gradient("input" + std::to_string(i), inputs[i], analytic,
                                    loss_value, settings);
    worst = std::max(worst, rep.max_rel_err);
  }
  return worst;
}

}  // namespace testsup
