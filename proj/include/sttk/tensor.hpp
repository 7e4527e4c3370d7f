#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sttk/rng.hpp"

namespace sttk {

using Shape = std::vector<size_t>;

size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // sized lazily; empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents' grads.
  std::function<void(const Node&)> backward_fn;

  std::vector<double>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// n-dimensional array of doubles that participates in a dynamically built
// reverse-mode graph. Copies are shallow handles to the same node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Trainable leaf.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  size_t dim(size_t axis) const { return node_->shape.at(axis); }
  size_t rank() const { return node_->shape.size(); }
  size_t size() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  std::span<double> mutable_data() { return node_->data; }
  double item() const;
  double at(size_t i) const { return node_->data[i]; }
  double at(size_t r, size_t c) const { return node_->data[r * node_->shape[1] + c]; }

  bool requires_grad() const { return node_->requires_grad; }
  // Gradient accumulator; all zeros when nothing has flowed in yet.
  std::span<const double> grad() const;
  void zero_grad();

  // Accumulates d(this)/d(leaf) into every tracked ancestor. `this` must be a
  // single-element tensor. Repeated calls accumulate.
  void backward() const;

  // Same data, no graph history.
  Tensor detach() const;

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_result(Shape, std::vector<double>,
                            std::vector<Tensor>,
                            std::function<void(const detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

// Builds an op output. The backward function is kept only if some input
// requires grad and grad mode is on.
Tensor make_result(Shape shape, std::vector<double> data,
                   std::vector<Tensor> inputs,
                   std::function<void(const detail::Node&)> backward_fn);

bool grad_enabled();

// Disables graph recording for its lifetime (inference, finite differences).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// ---- operations -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// x[rows x n] + b[n] broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
// x[rows x n] * g[n] broadcast over rows.
Tensor mul_bias(const Tensor& x, const Tensor& gain);
// x * s[index], differentiable in both.
Tensor scale_by_element(const Tensor& x, const Tensor& s, size_t index);
// Adds a non-differentiable constant of the same shape (masks, offsets).
Tensor add_constant(const Tensor& x, std::span<const double> constant);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor swish(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
// Gated linear unit over the last axis: first half * sigmoid(second half).
Tensor glu(const Tensor& x);
// Elementwise log(exp(a) + exp(b)); -inf inputs are handled exactly.
Tensor log_add_exp(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, size_t axis);
Tensor log_softmax(const Tensor& x, size_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// 2-D slicing/concatenation.
Tensor slice_rows(const Tensor& x, size_t start, size_t count);
Tensor slice_cols(const Tensor& x, size_t start, size_t count);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);

// out.flat[i] = index[i] >= 0 ? x.flat[index[i]] : fill
Tensor gather(const Tensor& x, std::span<const long> index, Shape out_shape,
              double fill = 0.0);
// out.flat[index[i]] += x.flat[i] for index[i] >= 0
Tensor scatter_add(const Tensor& x, std::span<const long> index,
                   Shape out_shape);
// Row lookup: table[V x d], ids -> [ids.size() x d].
Tensor embedding(const Tensor& table, std::span<const int> ids);

struct Conv1dSpec {
  size_t kernel = 1;
  size_t stride = 1;
  size_t padding = 0;
  bool depthwise = false;
};
size_t conv1d_output_length(size_t frames, const Conv1dSpec& spec);
// x[T x Cin]; weight [K x Cin x Cout] (or [K x C] when depthwise);
// bias [Cout] (may be undefined).
Tensor conv1d(const Tensor& x, const Tensor& weight, const Tensor& bias,
              const Conv1dSpec& spec);

// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& x, double p, RngStream& rng, bool training);

}  // namespace sttk
