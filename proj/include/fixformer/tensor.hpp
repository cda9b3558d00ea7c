#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "fixformer/errors.hpp"

namespace fixformer {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
};

// Dense f64 tensor, row-major, value-semantic handle over shared storage.
// Gradients accumulate (+=) across backward calls until zero_grad().
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, double fill, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double v);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::size_t size() const { return impl_->data.size(); }
  bool is_matrix() const { return impl_->shape.size() == 2; }
  bool is_scalar() const { return impl_->data.size() == 1 && impl_->shape.size() <= 1; }
  std::size_t rows() const;
  std::size_t cols() const;

  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& data() { return impl_->data; }
  double value() const;
  double at(std::size_t r, std::size_t c) const;
  double& at(std::size_t r, std::size_t c);

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  // Gradient buffer, allocated as zeros on first use.
  std::vector<double>& grad_accum();
  void zero_grad();

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// NaN/Inf guard. On by default; benchmarks switch it off.
void set_finite_checks(bool on);
bool finite_checks_enabled();
// Throws NumericError if the guard is on and t holds a NaN or Inf.
void guard_finite(const Tensor& t, const char* what);

// Execution-order record of differentiable ops. Reverse replay visits each
// node exactly once and only writes gradients, never forward values.
// Single writer: one forward/backward pass owns its tape.
class GradTape {
 public:
  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  void record(const char* name, const std::shared_ptr<TensorImpl>& out,
              std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse.
  // loss must be a scalar produced by an op recorded on this tape.
  void backward(const Tensor& loss);

  std::size_t op_count() const { return nodes_.size(); }
  std::size_t replay_count() const { return replayed_; }

  static GradTape* active();

 private:
  friend struct TapeScope;
  struct Node {
    const char* name;
    std::shared_ptr<TensorImpl> out;
    std::function<void()> backward;
  };
  std::vector<Node> nodes_;
  std::unordered_set<const TensorImpl*> outputs_;
  std::size_t replayed_ = 0;
};

// Makes a tape the recording target for the current thread while in scope.
struct TapeScope {
  explicit TapeScope(GradTape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  GradTape* prev_;
};

}  // namespace fixformer
