#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ptadet/rng.hpp"

namespace ptadet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty unless requires_grad
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
};

}  // namespace detail

/// Dense row-major float64 array with an optional gradient tape.
///
/// A Tensor is a shared handle: copies alias the same storage. Results of
/// ops record their parents when any input requires grad, and backward()
/// walks that graph in reverse topological order. Leaf grads accumulate
/// across backward() calls; intermediate grads are reset on each call.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Uniform in [-bound, bound).
  static Tensor uniform(Shape shape, double bound, Rng& rng, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  /// Writable view. Only meaningful for leaves (parameters, inputs).
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t flat) const { return data()[flat]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Reverse-mode sweep from a scalar. Throws ContractError on non-scalars.
  void backward() const;

  /// Same values, cut from the tape.
  Tensor detach() const;
  /// Deep copy of values (and requires_grad flag) into a fresh leaf.
  Tensor clone() const;

  // Internal: used by op implementations.
  static Tensor make_result(Shape shape, std::vector<double> values,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node&)> backward_fn);
  detail::Node& node() const;
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// ---- differentiable ops -----------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);           // [N×K]·[K×M]
Tensor transpose(const Tensor& a);                         // 2-D only
Tensor add(const Tensor& a, const Tensor& b);              // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);              // elementwise
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor add_bias(const Tensor& x, const Tensor& bias);      // [N×C] + [C]
Tensor mul_cols(const Tensor& x, const Tensor& s);         // [N×C] ⊙ [C]
/// s[i,j] + r[i] + c[j] for s [N×M], r [N], c [M].
Tensor add_outer(const Tensor& s, const Tensor& r, const Tensor& c);

Tensor relu(const Tensor& x);  // ReLU'(0) = 0
Tensor sigmoid(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);

/// Softmax along `axis`, max-subtracted.
Tensor softmax(const Tensor& x, std::size_t axis);
Tensor sum(const Tensor& x);   // -> scalar
Tensor mean(const Tensor& x);  // -> scalar
/// Reduce one axis by summation. Summation order is ascending index.
Tensor sum_axis(const Tensor& x, std::size_t axis);
/// [M×L×C] -> [M×C], channelwise max; ties route to the first index.
Tensor maxpool_group(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);  // [R×C] -> [len×C]
/// out[m] = Σ_k weights[m,k] · x[indices[m,k]] for x [R×C]; indices/weights are
/// flattened [M×K] and carry no gradient.
Tensor weighted_gather(const Tensor& x, std::span<const std::size_t> indices,
                       std::span<const double> weights, std::size_t k);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
/// Per-column standardization over rows: (x - mean) / sqrt(var + eps), population variance.
Tensor standardize_cols(const Tensor& x, double eps);
/// out[p,d,c] = a[p,d] · b[p,c].
Tensor outer_rows(const Tensor& a, const Tensor& b);

/// Elementwise smooth-L1 with unit transition point.
Tensor smooth_l1(const Tensor& x);
/// Elementwise focal term -α_t (1 - c_t)^γ log c_t with c_t = p for
/// foreground entries and 1 - p otherwise. p is clamped to [1e-7, 1 - 1e-7];
/// the clamp blocks gradient.
Tensor focal_terms(const Tensor& p, std::span<const unsigned char> foreground, double alpha,
                   double gamma);

}  // namespace ptadet
