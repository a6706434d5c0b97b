#include "pastel/ad/tensor.hpp"

#include "pastel/common/error.hpp"

namespace pastel::ad {

Parameter::Parameter(std::string n, Matrix v)
    : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

void Parameter::zero_grad() {
  if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
    grad = Matrix::Zero(value.rows(), value.cols());
  } else {
    grad.setZero();
  }
}

Eigen::Index Tensor::rows() const { return value().rows(); }
Eigen::Index Tensor::cols() const { return value().cols(); }
const Matrix& Tensor::value() const { return tape_->value(id_); }
const Matrix& Tensor::grad() const { return tape_->grad(id_); }

std::string Tensor::shape_string() const {
  return "[" + std::to_string(rows()) + "x" + std::to_string(cols()) + "]";
}

Tensor Tape::leaf(Matrix value, bool needs_grad, Parameter* param) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad && record_;
  n.param = param;
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Tensor Tape::constant(Matrix value) { return leaf(std::move(value), false, nullptr); }
Tensor Tape::input(Matrix value) { return leaf(std::move(value), true, nullptr); }

Tensor Tape::parameter(Parameter& p) {
  return leaf(p.value, true, &p);
}

Tensor Tape::push(Matrix value, std::span<const Tensor> parents, BackwardFn fn) {
  bool needs = false;
  for (const auto& t : parents) {
    if (&t.tape() != this) throw Error(ErrorCategory::internal, "operands live on different tapes");
    needs = needs || needs_grad(t.id());
  }
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs && record_;
  if (n.needs_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

Matrix& Tape::grad_slot(int id) {
  auto& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Tape::backward(const Tensor& out) {
  if (out.rows() != 1 || out.cols() != 1) {
    throw Error(ErrorCategory::shape, "backward needs a 1x1 output, got " + out.shape_string());
  }
  backward(out, Matrix::Ones(1, 1));
}

void Tape::backward(const Tensor& out, const Matrix& seed) {
  if (&out.tape() != this) throw Error(ErrorCategory::internal, "tensor is not on this tape");
  if (!record_) throw Error(ErrorCategory::internal, "backward on a non-recording tape");
  if (seed.rows() != out.rows() || seed.cols() != out.cols()) {
    throw Error(ErrorCategory::shape, "seed shape does not match output " + out.shape_string());
  }
  grad_slot(out.id()) += seed;
  for (int i = out.id(); i >= 0; --i) {
    auto& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.param != nullptr) {
      if (n.param->grad.rows() != n.grad.rows() || n.param->grad.cols() != n.grad.cols()) {
        n.param->zero_grad();
      }
      n.param->grad += n.grad;
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

} // namespace pastel::ad
