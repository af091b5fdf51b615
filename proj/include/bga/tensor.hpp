#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bga {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Operand shapes do not fit the operation.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An operation produced (or was handed) a NaN or infinite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Misuse of the differentiation graph (non-scalar or detached loss).
class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  // Creation order; inputs always carry a smaller value, which makes
  // sorting by `order` a topological sort of the graph.
  std::uint64_t order = 0;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  const char* op = "leaf";

  std::vector<double>& grad_buffer();
};

}  // namespace detail

/// Dense row-major array of doubles with an optional place in the reverse-mode
/// graph. Copies share storage; use `detach()` or `clone()` for a new buffer.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                       bool requires_grad = false);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values,
                       bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;
  /// Row count of a matrix; 1 for vectors and scalars.
  std::size_t rows() const;
  /// Column count of a matrix; length of a vector.
  std::size_t cols() const;

  std::span<const double> values() const;
  /// Writable view of a leaf's storage (parameter updates, probes).
  std::span<double> values_mut();
  double item() const;
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;
  std::vector<double> to_vector() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  /// New leaf holding a copy of the values, outside any graph.
  Tensor detach() const;
  /// New leaf with a copy of the values that keeps the requires_grad flag.
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

/// Populates grad buffers of every leaf reachable from `loss` that requires
/// grad. Leaf gradients accumulate across calls; intermediate buffers are reset.
void backward(const Tensor& loss);

namespace detail {

std::uint64_t next_order();

/// Creates an op output. The backward closure is attached only when one of the
/// inputs requires grad. Throws NumericError when `value` is not all finite.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   const char* op, std::function<void(Node&)> backward);

void require_finite(std::span<const double> values, const char* op);

inline bool wants_grad(const std::shared_ptr<Node>& n) { return n && n->requires_grad; }

}  // namespace detail

}  // namespace bga
