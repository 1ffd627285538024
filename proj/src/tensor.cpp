#include "hivae/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>
#include <utility>

#include "hivae/error.hpp"

namespace hivae::ad {

namespace {

thread_local bool t_grad_enabled = true;

using NodePtr = std::shared_ptr<Node>;
using BackwardFn = std::function<void(Node&)>;

Tensor make_result(const char* op, Shape shape, std::vector<double> value,
                   std::vector<NodePtr> inputs, BackwardFn backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (t_grad_enabled)
    for (const auto& in : inputs) needs = needs || in->requires_grad;
  if (needs) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// Grad buffer of an input, or nullptr when it does not take gradients.
double* grad_of(const NodePtr& in) {
  if (!in->requires_grad) return nullptr;
  in->ensure_grad();
  return in->grad.data();
}

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_string(a) + " and " +
                   shape_string(b));
}

std::size_t product(const Shape& s, std::size_t begin, std::size_t end) {
  std::size_t p = 1;
  for (std::size_t i = begin; i < end; ++i) p *= s[i];
  return p;
}

struct Broadcast {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia, ib;  // flat input index per output element
};

Broadcast broadcast(const char* op, const Shape& a, const Shape& b) {
  Broadcast bc;
  if (a == b) {
    bc.out = a;
    bc.same = true;
    return bc;
  }
  const std::size_t rank = std::max(a.size(), b.size());
  Shape pa(rank, 1), pb(rank, 1);
  std::copy(a.begin(), a.end(), pa.begin() + static_cast<std::ptrdiff_t>(rank - a.size()));
  std::copy(b.begin(), b.end(), pb.begin() + static_cast<std::ptrdiff_t>(rank - b.size()));
  bc.out.resize(rank);
  for (std::size_t d = 0; d < rank; ++d) {
    if (pa[d] != pb[d] && pa[d] != 1 && pb[d] != 1) shape_error(op, a, b);
    bc.out[d] = std::max(pa[d], pb[d]);
  }
  std::vector<std::size_t> sa(rank, 0), sb(rank, 0);
  std::size_t stride_a = 1, stride_b = 1;
  for (std::size_t d = rank; d-- > 0;) {
    sa[d] = pa[d] == 1 ? 0 : stride_a;
    sb[d] = pb[d] == 1 ? 0 : stride_b;
    stride_a *= pa[d];
    stride_b *= pb[d];
  }
  const std::size_t n = shape_size(bc.out);
  bc.ia.resize(n);
  bc.ib.resize(n);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t offa = 0, offb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bc.ia[i] = offa;
    bc.ib[i] = offb;
    for (std::size_t d = rank; d-- > 0;) {
      ++counter[d];
      offa += sa[d];
      offb += sb[d];
      if (counter[d] < bc.out[d]) break;
      offa -= sa[d] * counter[d];
      offb -= sb[d] * counter[d];
      counter[d] = 0;
    }
  }
  return bc;
}

// Elementwise binary op with broadcasting. `fwd(x, y)` gives the value;
// `dx(x, y, out)` and `dy(x, y, out)` give the local partial derivatives.
template <typename Fwd, typename Dx, typename Dy>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Dx dx, Dy dy) {
  auto bc = std::make_shared<Broadcast>(broadcast(op, a.shape(), b.shape()));
  const auto& va = a.data();
  const auto& vb = b.data();
  const std::size_t n = shape_size(bc->out);
  std::vector<double> out(n);
  if (bc->same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(va[i], vb[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = fwd(va[bc->ia[i]], vb[bc->ib[i]]);
  }
  Shape shape = bc->out;
  return make_result(op, std::move(shape), std::move(out), {a.node(), b.node()},
                     [bc, dx, dy](Node& self) {
                       const auto& A = self.inputs[0];
                       const auto& B = self.inputs[1];
                       double* ga = grad_of(A);
                       double* gb = grad_of(B);
                       const auto& va = A->value;
                       const auto& vb = B->value;
                       const std::size_t n = self.value.size();
                       for (std::size_t i = 0; i < n; ++i) {
                         const std::size_t ia = bc->same ? i : bc->ia[i];
                         const std::size_t ib = bc->same ? i : bc->ib[i];
                         const double g = self.grad[i];
                         if (ga) ga[ia] += g * dx(va[ia], vb[ib], self.value[i]);
                         if (gb) gb[ib] += g * dy(va[ia], vb[ib], self.value[i]);
                       }
                     });
}

// Elementwise unary op; `local(x, y)` is dy/dx given input x and output y.
template <typename Fwd, typename Local>
Tensor unary(const char* op, const Tensor& x, Fwd fwd, Local local) {
  const auto& vx = x.data();
  std::vector<double> out(vx.size());
  for (std::size_t i = 0; i < vx.size(); ++i) out[i] = fwd(vx[i]);
  return make_result(op, x.shape(), std::move(out), {x.node()}, [local](Node& self) {
    const auto& X = self.inputs[0];
    double* gx = grad_of(X);
    if (!gx) return;
    for (std::size_t i = 0; i < self.value.size(); ++i)
      gx[i] += self.grad[i] * local(X->value[i], self.value[i]);
  });
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                     shape_string(shape));
  return {product(shape, 0, axis), shape[axis], product(shape, axis + 1, shape.size())};
}

}  // namespace

std::size_t shape_size(const Shape& shape) { return product(shape, 0, shape.size()); }

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) out << (i ? ", " : "") << shape[i];
  out << ']';
  return out.str();
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_size(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_size(shape) != values.size())
    throw ShapeError("Tensor::from: shape " + shape_string(shape) + " needs " +
                     std::to_string(shape_size(shape)) + " values, got " + std::to_string(values.size()));
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({}, {value}, requires_grad); }

Tensor Tensor::row(std::vector<double> values, bool requires_grad) {
  const std::size_t n = values.size();
  return from({1, n}, std::move(values), requires_grad);
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape()));
  return node_->value[0];
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw ShapeError("at(row, col) on tensor of shape " + shape_string(shape()));
  return node_->value[row * dim(1) + col];
}

const std::vector<double>& Tensor::grad() const {
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() { node_->grad.assign(node_->value.size(), 0.0); }

// ---------------------------------------------------------------------------
// Tape

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

Tape Tape::record(const Tensor& root) {
  Tape tape;
  if (!root.defined() || !root.requires_grad()) return tape;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      tape.ops_.push_back(node);
      stack.pop_back();
    }
  }
  return tape;
}

void Tape::sweep() {
  if (ops_.empty()) return;
  Node* root = ops_.back();
  root->ensure_grad();
  std::fill(root->grad.begin(), root->grad.end(), 1.0);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    Node* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ShapeError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  Tape tape = Tape::record(loss);
  tape.sweep();
}

// ---------------------------------------------------------------------------
// Elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary("div", a, b, [](double x, double y) { return x / y; },
                [](double, double y, double) { return 1.0 / y; },
                [](double, double y, double out) { return -out / y; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary("add_scalar", x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double s) {
  return unary("mul_scalar", x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor relu(const Tensor& x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
               [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& x, double slope) {
  return unary("leaky_relu", x, [slope](double v) { return v > 0.0 ? v : slope * v; },
               [slope](double v, double) { return v > 0.0 ? 1.0 : slope; });
}

Tensor exponential(const Tensor& x) {
  return unary("exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary("log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor tanh(const Tensor& x) {
  return unary("tanh", x, [](double v) { return std::tanh(v); },
               [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
  return unary("sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
               [](double, double y) { return y * (1.0 - y); });
}

Tensor square(const Tensor& x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor detach(const Tensor& x) { return Tensor::from(x.shape(), x.data(), false); }

// ---------------------------------------------------------------------------
// Linear algebra and layout

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_error("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = pa[i * k + p];
      if (s == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += s * brow[j];
    }
  }
  return make_result("matmul", {m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    const auto& A = self.inputs[0];
    const auto& B = self.inputs[1];
    const double* g = self.grad.data();
    if (double* ga = grad_of(A)) {
      const double* pb = B->value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* grow = g + i * n;
          const double* brow = pb + p * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
    }
    if (double* gb = grad_of(B)) {
      const double* pa = A->value.data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double s = pa[i * k + p];
          if (s == 0.0) continue;
          const double* grow = g + i * n;
          double* gbrow = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += s * grow[j];
        }
    }
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose: expected 2-D tensor, got " + shape_string(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x.data()[i * c + j];
  return make_result("transpose", {c, r}, std::move(out), {x.node()}, [r, c](Node& self) {
    double* gx = grad_of(self.inputs[0]);
    if (!gx) return;
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += self.grad[j * r + i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_size(shape) != x.size()) shape_error("reshape", x.shape(), shape);
  return make_result("reshape", std::move(shape), x.data(), {x.node()}, [](Node& self) {
    double* gx = grad_of(self.inputs[0]);
    if (!gx) return;
    for (std::size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front().shape();
  split_axis(first, axis, "concat");
  Shape shape = first;
  shape[axis] = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.rank() != first.size()) shape_error("concat", first, p.shape());
    for (std::size_t d = 0; d < first.size(); ++d)
      if (d != axis && p.dim(d) != first[d]) shape_error("concat", first, p.shape());
    shape[axis] += p.dim(axis);
  }
  const std::size_t outer = product(first, 0, axis);
  const std::size_t inner = product(first, axis + 1, first.size());
  const std::size_t out_row = shape[axis] * inner;
  std::vector<double> out(shape_size(shape));
  std::vector<NodePtr> inputs;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(axis) * inner;
    widths.push_back(w);
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.data().data() + o * w, w, out.data() + o * out_row + offset);
    offset += w;
    inputs.push_back(p.node());
  }
  return make_result("concat", std::move(shape), std::move(out), std::move(inputs),
                     [widths, outer, out_row](Node& self) {
                       std::size_t offset = 0;
                       for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                         const std::size_t w = widths[k];
                         if (double* g = grad_of(self.inputs[k])) {
                           for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t i = 0; i < w; ++i)
                               g[o * w + i] += self.grad[o * out_row + offset + i];
                         }
                         offset += w;
                       }
                     });
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  const auto [outer, n, inner] = split_axis(x.shape(), axis, "slice");
  if (start + length > n || length == 0)
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") invalid for axis " + std::to_string(axis) + " of " + shape_string(x.shape()));
  Shape shape = x.shape();
  shape[axis] = length;
  const std::size_t w = length * inner;
  const std::size_t row = n * inner;
  const std::size_t off = start * inner;
  std::vector<double> out(outer * w);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(x.data().data() + o * row + off, w, out.data() + o * w);
  return make_result("slice", std::move(shape), std::move(out), {x.node()},
                     [outer = outer, w, row, off](Node& self) {
                       double* gx = grad_of(self.inputs[0]);
                       if (!gx) return;
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t i = 0; i < w; ++i) gx[o * row + off + i] += self.grad[o * w + i];
                     });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::int32_t>& indices) {
  if (table.rank() != 1 && table.rank() != 2)
    throw ShapeError("embedding_lookup: table must be 1-D or 2-D, got " + shape_string(table.shape()));
  const std::size_t rows = table.dim(0);
  const std::size_t d = table.rank() == 2 ? table.dim(1) : 1;
  for (auto idx : indices)
    if (idx < 0 || static_cast<std::size_t>(idx) >= rows)
      throw std::out_of_range("embedding_lookup: index " + std::to_string(idx) + " outside table of " +
                              std::to_string(rows) + " rows");
  std::vector<double> out(indices.size() * d);
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(table.data().data() + static_cast<std::size_t>(indices[r]) * d, d, out.data() + r * d);
  Shape shape = table.rank() == 2 ? Shape{indices.size(), d} : Shape{indices.size()};
  return make_result("embedding_lookup", std::move(shape), std::move(out), {table.node()},
                     [indices, d](Node& self) {
                       double* gt = grad_of(self.inputs[0]);
                       if (!gt) return;
                       for (std::size_t r = 0; r < indices.size(); ++r) {
                         double* dst = gt + static_cast<std::size_t>(indices[r]) * d;
                         for (std::size_t j = 0; j < d; ++j) dst[j] += self.grad[r * d + j];
                       }
                     });
}

Tensor pick(const Tensor& x, const std::vector<std::int32_t>& indices) {
  if (x.rank() != 2 || x.dim(0) != indices.size())
    throw ShapeError("pick: expected [" + std::to_string(indices.size()) + ", c] input, got " +
                     shape_string(x.shape()));
  const std::size_t c = x.dim(1);
  std::vector<double> out(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] < 0 || static_cast<std::size_t>(indices[r]) >= c)
      throw std::out_of_range("pick: index " + std::to_string(indices[r]) + " outside " + std::to_string(c) +
                              " columns");
    out[r] = x.data()[r * c + static_cast<std::size_t>(indices[r])];
  }
  return make_result("pick", {indices.size()}, std::move(out), {x.node()}, [indices, c](Node& self) {
    double* gx = grad_of(self.inputs[0]);
    if (!gx) return;
    for (std::size_t r = 0; r < indices.size(); ++r)
      gx[r * c + static_cast<std::size_t>(indices[r])] += self.grad[r];
  });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return make_result("sum", {}, {total}, {x.node()}, [](Node& self) {
    double* gx = grad_of(self.inputs[0]);
    if (!gx) return;
    const double g = self.grad[0];
    for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) gx[i] += g;
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean of empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor sum_over_axis(const Tensor& x, std::size_t axis) {
  const auto [outer, n, inner] = split_axis(x.shape(), axis, "sum_over_axis");
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(outer * inner, 0.0);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += x.data()[(o * n + k) * inner + i];
  return make_result("sum_over_axis", std::move(shape), std::move(out), {x.node()},
                     [outer = outer, n = n, inner = inner](Node& self) {
                       double* gx = grad_of(self.inputs[0]);
                       if (!gx) return;
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t k = 0; k < n; ++k)
                           for (std::size_t i = 0; i < inner; ++i)
                             gx[(o * n + k) * inner + i] += self.grad[o * inner + i];
                     });
}

Tensor mean_over_axis(const Tensor& x, std::size_t axis) {
  const auto [outer, n, inner] = split_axis(x.shape(), axis, "mean_over_axis");
  (void)outer;
  (void)inner;
  return mul_scalar(sum_over_axis(x, axis), 1.0 / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// Normalisation

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto [outer, n, inner] = split_axis(x.shape(), axis, "softmax");
  std::vector<double> out(x.size());
  const auto& v = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, v[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k) total += (out[base + k * inner] = std::exp(v[base + k * inner] - mx));
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] /= total;
    }
  return make_result("softmax", x.shape(), std::move(out), {x.node()},
                     [outer = outer, n = n, inner = inner](Node& self) {
                       double* gx = grad_of(self.inputs[0]);
                       if (!gx) return;
                       const auto& y = self.value;
                       const auto& g = self.grad;
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t i = 0; i < inner; ++i) {
                           const std::size_t base = o * n * inner + i;
                           double dot = 0.0;
                           for (std::size_t k = 0; k < n; ++k) dot += g[base + k * inner] * y[base + k * inner];
                           for (std::size_t k = 0; k < n; ++k)
                             gx[base + k * inner] += y[base + k * inner] * (g[base + k * inner] - dot);
                         }
                     });
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const auto [outer, n, inner] = split_axis(x.shape(), axis, "log_softmax");
  std::vector<double> out(x.size());
  const auto& v = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < n; ++k) mx = std::max(mx, v[base + k * inner]);
      double total = 0.0;
      for (std::size_t k = 0; k < n; ++k) total += std::exp(v[base + k * inner] - mx);
      const double lse = mx + std::log(total);
      for (std::size_t k = 0; k < n; ++k) out[base + k * inner] = v[base + k * inner] - lse;
    }
  return make_result("log_softmax", x.shape(), std::move(out), {x.node()},
                     [outer = outer, n = n, inner = inner](Node& self) {
                       double* gx = grad_of(self.inputs[0]);
                       if (!gx) return;
                       const auto& y = self.value;
                       const auto& g = self.grad;
                       for (std::size_t o = 0; o < outer; ++o)
                         for (std::size_t i = 0; i < inner; ++i) {
                           const std::size_t base = o * n * inner + i;
                           double total = 0.0;
                           for (std::size_t k = 0; k < n; ++k) total += g[base + k * inner];
                           for (std::size_t k = 0; k < n; ++k)
                             gx[base + k * inner] += g[base + k * inner] - std::exp(y[base + k * inner]) * total;
                         }
                     });
}

Tensor layer_norm(const Tensor& x, double eps) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  std::vector<double> out(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  const auto& v = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = v.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = inv;
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (row[j] - mu) * inv;
  }
  return make_result("layer_norm", x.shape(), std::move(out), {x.node()}, [inv_std, d, rows](Node& self) {
    double* gx = grad_of(self.inputs[0]);
    if (!gx) return;
    const auto& y = self.value;
    const auto& g = self.grad;
    for (std::size_t r = 0; r < rows; ++r) {
      double mg = 0.0, mgy = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        mg += g[r * d + j];
        mgy += g[r * d + j] * y[r * d + j];
      }
      mg /= static_cast<double>(d);
      mgy /= static_cast<double>(d);
      const double inv = (*inv_std)[r];
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += inv * (g[r * d + j] - mg - y[r * d + j] * mgy);
    }
  });
}

// ---------------------------------------------------------------------------
// Segment ops

namespace {

void check_segments(const char* op, std::size_t rows, const std::vector<std::int32_t>& segments,
                    std::size_t num_segments) {
  if (segments.size() != rows)
    throw ShapeError(std::string(op) + ": " + std::to_string(segments.size()) + " segment ids for " +
                     std::to_string(rows) + " rows");
  for (auto s : segments)
    if (s < 0 || static_cast<std::size_t>(s) >= num_segments)
      throw std::out_of_range(std::string(op) + ": segment id " + std::to_string(s) + " out of range");
}

}  // namespace

Tensor segment_softmax(const Tensor& scores, const std::vector<std::int32_t>& segments,
                       std::size_t num_segments) {
  if (!(scores.rank() == 1 || (scores.rank() == 2 && scores.dim(1) == 1)))
    throw ShapeError("segment_softmax: expected [E] or [E, 1] scores, got " + shape_string(scores.shape()));
  const std::size_t e = scores.dim(0);
  check_segments("segment_softmax", e, segments, num_segments);
  const auto& v = scores.data();
  std::vector<double> mx(num_segments, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < e; ++i) mx[segments[i]] = std::max(mx[segments[i]], v[i]);
  std::vector<double> out(e), total(num_segments, 0.0);
  for (std::size_t i = 0; i < e; ++i) total[segments[i]] += (out[i] = std::exp(v[i] - mx[segments[i]]));
  for (std::size_t i = 0; i < e; ++i) out[i] /= total[segments[i]];
  return make_result("segment_softmax", scores.shape(), std::move(out), {scores.node()},
                     [segments, num_segments](Node& self) {
                       double* gx = grad_of(self.inputs[0]);
                       if (!gx) return;
                       std::vector<double> dot(num_segments, 0.0);
                       for (std::size_t i = 0; i < segments.size(); ++i)
                         dot[segments[i]] += self.grad[i] * self.value[i];
                       for (std::size_t i = 0; i < segments.size(); ++i)
                         gx[i] += self.value[i] * (self.grad[i] - dot[segments[i]]);
                     });
}

Tensor segment_sum(const Tensor& x, const std::vector<std::int32_t>& segments, std::size_t num_segments) {
  if (x.rank() != 2) throw ShapeError("segment_sum: expected 2-D input, got " + shape_string(x.shape()));
  const std::size_t e = x.dim(0), d = x.dim(1);
  check_segments("segment_sum", e, segments, num_segments);
  std::vector<double> out(num_segments * d, 0.0);
  for (std::size_t i = 0; i < e; ++i) {
    const double* src = x.data().data() + i * d;
    double* dst = out.data() + static_cast<std::size_t>(segments[i]) * d;
    for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
  }
  return make_result("segment_sum", {num_segments, d}, std::move(out), {x.node()}, [segments, d](Node& self) {
    double* gx = grad_of(self.inputs[0]);
    if (!gx) return;
    for (std::size_t i = 0; i < segments.size(); ++i) {
      const double* src = self.grad.data() + static_cast<std::size_t>(segments[i]) * d;
      for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += src[j];
    }
  });
}

// ---------------------------------------------------------------------------
// Probabilistic helpers

Tensor gaussian_kl(const Tensor& mu_q, const Tensor& logvar_q, const Tensor& mu_p, const Tensor& logvar_p) {
  for (const Tensor* t : {&logvar_q, &mu_p, &logvar_p})
    if (t->shape() != mu_q.shape()) shape_error("gaussian_kl", mu_q.shape(), t->shape());
  const Tensor ratio = (exponential(logvar_q) + square(mu_q - mu_p)) / exponential(logvar_p);
  return mul_scalar(sum(logvar_p - logvar_q + ratio - 1.0), 0.5);
}

Tensor reparameterize(const Tensor& mu, const Tensor& logvar, RngStream& rng) {
  if (mu.shape() != logvar.shape()) shape_error("reparameterize", mu.shape(), logvar.shape());
  std::vector<double> eps(mu.size());
  for (auto& e : eps) e = rng.normal();
  const Tensor noise = Tensor::from(mu.shape(), std::move(eps));
  return mu + exponential(mul_scalar(logvar, 0.5)) * noise;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_error("mse", a.shape(), b.shape());
  return mean(square(a - b));
}

}  // namespace hivae::ad
