#include "fixformer/tensor.hpp"

#include <atomic>
#include <cmath>
#include <numeric>
#include <sstream>

namespace fixformer {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::size_t shape_product(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t e : s) {
    if (e == 0) throw ContractError("tensor shape has zero extent " + shape_str(s));
    n *= e;
  }
  return n;
}

std::atomic<bool> g_finite_checks{true};

thread_local GradTape* t_active_tape = nullptr;

}  // namespace

Tensor::Tensor(Shape shape, double fill, bool requires_grad) {
  std::size_t n = shape_product(shape);
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data.assign(n, fill);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  std::size_t n = shape_product(shape);
  if (n != values.size()) {
    throw DimensionError("tensor data length " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
  guard_finite(*this, "tensor construction");
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

std::size_t Tensor::rows() const {
  if (!is_matrix()) throw ContractError("rows() on non-matrix tensor " + shape_str(shape()));
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  if (!is_matrix()) throw ContractError("cols() on non-matrix tensor " + shape_str(shape()));
  return impl_->shape[1];
}

double Tensor::value() const {
  if (!is_scalar()) throw ContractError("value() on non-scalar tensor " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  return impl_->data[r * cols() + c];
}

double& Tensor::at(std::size_t r, std::size_t c) {
  return impl_->data[r * cols() + c];
}

Tensor& Tensor::set_requires_grad(bool on) {
  impl_->requires_grad = on;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad()) throw ContractError("gradient requested but never populated");
  return impl_->grad;
}

std::vector<double>& Tensor::grad_accum() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

void set_finite_checks(bool on) { g_finite_checks.store(on, std::memory_order_relaxed); }

bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }

void guard_finite(const Tensor& t, const char* what) {
  if (!finite_checks_enabled()) return;
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value in ") + what);
    }
  }
}

void GradTape::record(const char* name, const std::shared_ptr<TensorImpl>& out,
                      std::function<void()> backward) {
  nodes_.push_back(Node{name, out, std::move(backward)});
  outputs_.insert(out.get());
}

void GradTape::backward(const Tensor& loss) {
  if (!loss.defined() || !loss.is_scalar()) {
    throw ContractError("backward() requires a scalar loss");
  }
  if (outputs_.find(loss.impl().get()) == outputs_.end()) {
    throw ContractError("backward() loss is not an output recorded on this tape");
  }
  loss.impl()->grad.resize(1, 0.0);
  loss.impl()->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    ++replayed_;
    it->backward();
  }
}

GradTape* GradTape::active() { return t_active_tape; }

TapeScope::TapeScope(GradTape& tape) : prev_(t_active_tape) { t_active_tape = &tape; }

TapeScope::~TapeScope() { t_active_tape = prev_; }

}  // namespace fixformer
