#pragma once

#include <Eigen/Core>

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace pastel::ad {

/// All tensors are 2-D, row-major, 64-bit. Batches are stacked along rows.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Trainable weight that outlives any tape. Gradients accumulate into `grad`.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v);

  void zero_grad();
  Eigen::Index size() const noexcept { return value.size(); }
};

class Tape;

/// Handle to one node on a tape. Cheap to copy; valid while its tape lives.
class Tensor {
public:
  Tensor() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const noexcept { return *tape_; }
  int id() const noexcept { return id_; }

  Eigen::Index rows() const;
  Eigen::Index cols() const;
  const Matrix& value() const;
  /// Empty until backward reaches this node.
  const Matrix& grad() const;
  std::string shape_string() const;

private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Records operations in execution order; backward walks them in reverse.
/// A tape is single-threaded and one-shot: call backward at most once.
class Tape {
public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  /// With `record == false` no backward closures are kept (inference mode).
  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const noexcept { return record_; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Leaf that never receives gradient.
  Tensor constant(Matrix value);
  /// Leaf whose gradient is kept on the tape (read it through Tensor::grad).
  Tensor input(Matrix value);
  /// Leaf bound to a parameter; backward adds into `p.grad`.
  Tensor parameter(Parameter& p);

  /// Seeds d(out)/d(out) = 1; `out` must be 1x1.
  void backward(const Tensor& out);
  void backward(const Tensor& out, const Matrix& seed);

  // Op-implementer interface.
  Tensor push(Matrix value, std::span<const Tensor> parents, BackwardFn fn);
  Tensor push(Matrix value, std::initializer_list<Tensor> parents, BackwardFn fn) {
    return push(std::move(value), std::span<const Tensor>(parents.begin(), parents.size()), std::move(fn));
  }
  const Matrix& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const Matrix& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  /// Zero-initialised on first access.
  Matrix& grad_slot(int id);

private:
  struct Node {
    Matrix value;
    Matrix grad;
    BackwardFn backward;
    Parameter* param = nullptr;
    bool needs_grad = false;
  };

  Tensor leaf(Matrix value, bool needs_grad, Parameter* param);

  std::vector<Node> nodes_;
  bool record_;
};

} // namespace pastel::ad
