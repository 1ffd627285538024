#pragma once

// Minimal define-by-run reverse-mode autodiff over dense float64 arrays.
//
// Every op returns a new Tensor. When gradient recording is enabled and any
// input requires a gradient, the result keeps references to its inputs and a
// backward rule; `backward(loss)` orders the recorded graph into a Tape and
// sweeps it in reverse. Tapes are confined to the thread that built them.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

#include "hivae/rng.hpp"

namespace hivae::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

struct Node {
  Shape shape;
  std::vector<double> value;  // row-major
  std::vector<double> grad;   // empty until materialised, then same size as value
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Accumulates this node's grad into the grads of its inputs.
  std::function<void(Node&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // Row vector of shape [1, n].
  static Tensor row(std::vector<double> values, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  const std::vector<double>& data() const { return node_->value; }
  // Mutable access for leaves (parameter updates, initialisation).
  std::vector<double>& mutable_data() { return node_->value; }
  double item() const;
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t row, std::size_t col) const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  // Zero-filled if never materialised.
  const std::vector<double>& grad() const;
  void zero_grad();

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

// ---------------------------------------------------------------------------
// Gradient recording control (per thread).

bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Topologically ordered recording of the ops reachable from a root.
class Tape {
 public:
  static Tape record(const Tensor& root);
  const std::vector<Node*>& ops() const { return ops_; }
  // Seeds the root gradient with 1 and runs every backward rule in reverse order.
  void sweep();

 private:
  std::vector<Node*> ops_;  // inputs precede consumers
};

// Populates .grad() of every requires_grad tensor reachable from a scalar loss.
void backward(const Tensor& loss);

// ---------------------------------------------------------------------------
// Ops. Binary elementwise ops broadcast numpy-style (trailing-dimension
// alignment, extents equal or 1); anything else raises ShapeError.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& x, double s);
Tensor mul_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(const Tensor& x);                // 2-D only
Tensor reshape(const Tensor& x, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);

// Rows of `table` ([V, d] or [V]) at `indices`, giving [n, d] (or [n]).
Tensor embedding_lookup(const Tensor& table, const std::vector<std::int32_t>& indices);
// out[r] = x[r, indices[r]] for a 2-D x; shape [n].
Tensor pick(const Tensor& x, const std::vector<std::int32_t>& indices);

Tensor sum(const Tensor& x);   // scalar (shape {})
Tensor mean(const Tensor& x);  // scalar
Tensor sum_over_axis(const Tensor& x, std::size_t axis);  // axis removed
Tensor mean_over_axis(const Tensor& x, std::size_t axis);

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, double slope);
Tensor exponential(const Tensor& x);
Tensor log(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor square(const Tensor& x);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax(const Tensor& x, std::size_t axis);
// Normalises over the last axis to zero mean and unit variance (no affine).
Tensor layer_norm(const Tensor& x, double eps = 1e-5);

// Softmax of scores ([E] or [E, 1]) within groups sharing a segment id.
Tensor segment_softmax(const Tensor& scores, const std::vector<std::int32_t>& segments,
                       std::size_t num_segments);
// Sums rows of x ([E, d]) into num_segments rows by segment id.
Tensor segment_sum(const Tensor& x, const std::vector<std::int32_t>& segments,
                   std::size_t num_segments);

// Same values, no gradient path.
Tensor detach(const Tensor& x);

// KL(N(mu_q, exp(logvar_q)) || N(mu_p, exp(logvar_p))) summed over all entries.
Tensor gaussian_kl(const Tensor& mu_q, const Tensor& logvar_q, const Tensor& mu_p,
                   const Tensor& logvar_p);
// mu + exp(logvar / 2) * eps with eps ~ N(0, I) drawn from rng.
Tensor reparameterize(const Tensor& mu, const Tensor& logvar, RngStream& rng);
// Mean of squared differences.
Tensor mse(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a, double s) { return add_scalar(a, -s); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

}  // namespace hivae::ad
