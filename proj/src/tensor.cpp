#include "ptadet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "ptadet/errors.hpp"

namespace ptadet {

using detail::Node;

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

namespace {

void check_shape(const Shape& shape) {
  for (std::size_t e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
}

void check_finite(const std::vector<double>& values, const char* op) {
  for (double v : values)
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite value produced by ") + op);
}

bool needs_grad(const Node& n) { return n.requires_grad; }

// Accumulates into parent i's grad when it tracks gradients.
inline double* pgrad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  return p.requires_grad ? p.grad.data() : nullptr;
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(t.shape()));
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

}  // namespace

// ---- Tensor -----------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  check_shape(shape);
  if (values.size() != shape_numel(shape))
    throw DimensionError("data length " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
  check_finite(values, "Tensor::from");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad.assign(node->data.size(), 0.0);
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) { return from({1}, {value}, requires_grad); }

Tensor Tensor::uniform(Shape shape, double bound, Rng& rng, bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(-bound, bound);
  return from(std::move(shape), std::move(v), requires_grad);
}

Node& Tensor::node() const {
  if (!node_) throw ContractError("use of undefined tensor");
  return *node_;
}

const Shape& Tensor::shape() const { return node().shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return node().data.size(); }
std::span<const double> Tensor::data() const { return node().data; }
std::span<double> Tensor::mutable_data() { return node().data; }

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
  return node().data[0];
}

bool Tensor::requires_grad() const { return node().requires_grad; }

void Tensor::set_requires_grad(bool on) {
  Node& n = node();
  if (!n.is_leaf()) throw ContractError("requires_grad can only be changed on leaf tensors");
  n.requires_grad = on;
  if (on && n.grad.size() != n.data.size()) n.grad.assign(n.data.size(), 0.0);
  if (!on) n.grad.clear();
}

std::span<const double> Tensor::grad() const {
  if (!requires_grad()) throw ContractError("grad() on tensor without requires_grad");
  return node().grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!requires_grad()) throw ContractError("grad() on tensor without requires_grad");
  return node().grad;
}

void Tensor::zero_grad() {
  Node& n = node();
  std::fill(n.grad.begin(), n.grad.end(), 0.0);
}

void Tensor::backward() const {
  Node& root = node();
  if (root.data.size() != 1) throw ContractError("backward() requires a scalar loss, got " + shape_str(root.shape));
  if (!root.requires_grad) throw ContractError("backward() on a loss not connected to any parameter");

  // Iterative post-order DFS gives a topological order (parents before children).
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{&root, 0}};
  seen.insert(&root);
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node* p = n->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  for (Node* n : order)
    if (!n->is_leaf()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
  root.grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
}

Tensor Tensor::detach() const {
  const Node& n = node();
  auto out = std::make_shared<Node>();
  out->shape = n.shape;
  out->data = n.data;
  return Tensor(std::move(out));
}

Tensor Tensor::clone() const {
  Tensor t = detach();
  if (requires_grad()) t.set_requires_grad(true);
  return t;
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                           std::function<void(Node&)> backward_fn) {
  check_finite(values, "tensor op");
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->data = std::move(values);
  bool grad = std::any_of(parents.begin(), parents.end(), [](const Tensor& p) { return needs_grad(p.node()); });
  if (grad) {
    node->requires_grad = true;
    node->grad.assign(node->data.size(), 0.0);
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " · " + shape_str(b.shape()));
  auto A = a.data();
  auto B = b.data();
  std::vector<double> out(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A[i * k + p];
      if (av == 0.0) continue;
      const double* brow = &B[p * m];
      double* orow = &out[i * m];
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  return Tensor::make_result({n, m}, std::move(out), {a, b}, [n, k, m](Node& self) {
    const auto& G = self.grad;
    const auto& A = self.parents[0]->data;
    const auto& B = self.parents[1]->data;
    if (double* ga = pgrad(self, 0))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < m; ++j) acc += G[i * m + j] * B[p * m + j];
          ga[i * k + p] += acc;
        }
    if (double* gb = pgrad(self, 1))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A[i * k + p];
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < m; ++j) gb[p * m + j] += av * G[i * m + j];
        }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t n = a.dim(0), m = a.dim(1);
  auto A = a.data();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[j * n + i] = A[i * m + j];
  return Tensor::make_result({m, n}, std::move(out), {a}, [n, m](Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) g[i * m + j] += self.grad[j * n + i];
  });
}

// ---- elementwise ------------------------------------------------------------

namespace {

template <typename Fwd, typename Dfa, typename Dfb>
Tensor binary(const Tensor& a, const Tensor& b, const char* op, Fwd f, Dfa dfa, Dfb dfb) {
  require_same(a, b, op);
  auto A = a.data();
  auto B = b.data();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(A[i], B[i]);
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [dfa, dfb](Node& self) {
    const auto& A = self.parents[0]->data;
    const auto& B = self.parents[1]->data;
    double* ga = pgrad(self, 0);
    double* gb = pgrad(self, 1);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      if (ga) ga[i] += self.grad[i] * dfa(A[i], B[i]);
      if (gb) gb[i] += self.grad[i] * dfb(A[i], B[i]);
    }
  });
}

// dfx receives (input, output).
template <typename Fwd, typename Dfx>
Tensor unary(const Tensor& x, Fwd f, Dfx dfx) {
  auto X = x.data();
  std::vector<double> out(X.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(X[i]);
  return Tensor::make_result(x.shape(), std::move(out), {x}, [dfx](Node& self) {
    const auto& X = self.parents[0]->data;
    double* g = pgrad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * dfx(X[i], self.data[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
                [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
                [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
                [](double x, double) { return x; });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

Tensor add_scalar(const Tensor& a, double value) {
  return unary(a, [value](double x) { return x + value; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& x) {
  return unary(x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      x,
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor log(const Tensor& x) {
  for (double v : x.data())
    if (!(v > 0.0)) throw NumericError("log of non-positive value");
  return unary(x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor square(const Tensor& x) {
  return unary(x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

Tensor smooth_l1(const Tensor& x) {
  return unary(
      x, [](double v) { return std::abs(v) < 1.0 ? 0.5 * v * v : std::abs(v) - 0.5; },
      [](double v, double) { return std::abs(v) < 1.0 ? v : (v > 0.0 ? 1.0 : -1.0); });
}

Tensor focal_terms(const Tensor& p, std::span<const unsigned char> foreground, double alpha, double gamma) {
  auto P = p.data();
  if (foreground.size() != P.size())
    throw DimensionError("focal_terms: label count " + std::to_string(foreground.size()) + " vs " +
                         std::to_string(P.size()) + " probabilities");
  constexpr double lo = 1e-7, hi = 1.0 - 1e-7;
  std::vector<unsigned char> fg(foreground.begin(), foreground.end());
  std::vector<double> out(P.size());
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double c = std::clamp(P[i], lo, hi);
    const double ct = fg[i] ? c : 1.0 - c;
    const double at = fg[i] ? alpha : 1.0 - alpha;
    out[i] = -at * std::pow(1.0 - ct, gamma) * std::log(ct);
  }
  return Tensor::make_result(p.shape(), std::move(out), {p}, [fg = std::move(fg), alpha, gamma](Node& self) {
    const auto& P = self.parents[0]->data;
    double* g = pgrad(self, 0);
    for (std::size_t i = 0; i < P.size(); ++i) {
      if (P[i] < lo || P[i] > hi) continue;
      const double ct = fg[i] ? P[i] : 1.0 - P[i];
      const double at = fg[i] ? alpha : 1.0 - alpha;
      // d/dct of -at (1-ct)^γ log ct
      double d = -at * std::pow(1.0 - ct, gamma) / ct;
      if (gamma != 0.0) d += at * gamma * std::pow(1.0 - ct, gamma - 1.0) * std::log(ct);
      g[i] += self.grad[i] * (fg[i] ? d : -d);
    }
  });
}

// ---- broadcasting helpers ---------------------------------------------------

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_bias");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (bias.numel() != c) throw DimensionError("add_bias: bias length " + std::to_string(bias.numel()) + " vs " + std::to_string(c) + " channels");
  auto X = x.data();
  auto B = bias.data();
  std::vector<double> out(X.begin(), X.end());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += B[j];
  return Tensor::make_result(x.shape(), std::move(out), {x, bias}, [n, c](Node& self) {
    if (double* gx = pgrad(self, 0))
      for (std::size_t i = 0; i < n * c; ++i) gx[i] += self.grad[i];
    if (double* gb = pgrad(self, 1))
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) gb[j] += self.grad[i * c + j];
  });
}

Tensor mul_cols(const Tensor& x, const Tensor& s) {
  require_rank(x, 2, "mul_cols");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (s.numel() != c) throw DimensionError("mul_cols: scale length mismatch");
  auto X = x.data();
  auto S = s.data();
  std::vector<double> out(n * c);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = X[i * c + j] * S[j];
  return Tensor::make_result(x.shape(), std::move(out), {x, s}, [n, c](Node& self) {
    const auto& X = self.parents[0]->data;
    const auto& S = self.parents[1]->data;
    double* gx = pgrad(self, 0);
    double* gs = pgrad(self, 1);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) {
        const double g = self.grad[i * c + j];
        if (gx) gx[i * c + j] += g * S[j];
        if (gs) gs[j] += g * X[i * c + j];
      }
  });
}

Tensor add_outer(const Tensor& s, const Tensor& r, const Tensor& c) {
  require_rank(s, 2, "add_outer");
  const std::size_t n = s.dim(0), m = s.dim(1);
  if (r.numel() != n || c.numel() != m) throw DimensionError("add_outer: vector lengths do not match " + shape_str(s.shape()));
  auto S = s.data();
  auto R = r.data();
  auto C = c.data();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = S[i * m + j] + R[i] + C[j];
  return Tensor::make_result(s.shape(), std::move(out), {s, r, c}, [n, m](Node& self) {
    double* gs = pgrad(self, 0);
    double* gr = pgrad(self, 1);
    double* gc = pgrad(self, 2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double g = self.grad[i * m + j];
        if (gs) gs[i * m + j] += g;
        if (gr) gr[i] += g;
        if (gc) gc[j] += g;
      }
  });
}

// ---- reductions -------------------------------------------------------------

namespace {

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) throw DimensionError(std::string(op) + ": axis out of range for " + shape_str(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "softmax");
  auto X = x.data();
  std::vector<double> out(X.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      double mx = X[base];
      for (std::size_t k = 1; k < s.n; ++k) mx = std::max(mx, X[base + k * s.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.n; ++k) z += (out[base + k * s.inner] = std::exp(X[base + k * s.inner] - mx));
      for (std::size_t k = 0; k < s.n; ++k) out[base + k * s.inner] /= z;
    }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [s](Node& self) {
    double* g = pgrad(self, 0);
    const auto& Y = self.data;
    const auto& G = self.grad;
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < s.n; ++k) dot += G[base + k * s.inner] * Y[base + k * s.inner];
        for (std::size_t k = 0; k < s.n; ++k) {
          const std::size_t i = base + k * s.inner;
          g[i] += Y[i] * (G[i] - dot);
        }
      }
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  return Tensor::make_result({1}, {acc}, {x}, [](Node& self) {
    double* g = pgrad(self, 0);
    const std::size_t n = self.parents[0]->data.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor sum_axis(const Tensor& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis, "sum_axis");
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.shape()[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  auto X = x.data();
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.n; ++k)
      for (std::size_t in = 0; in < s.inner; ++in) out[o * s.inner + in] += X[(o * s.n + k) * s.inner + in];
  return Tensor::make_result(std::move(out_shape), std::move(out), {x}, [s](Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t k = 0; k < s.n; ++k)
        for (std::size_t in = 0; in < s.inner; ++in) g[(o * s.n + k) * s.inner + in] += self.grad[o * s.inner + in];
  });
}

Tensor maxpool_group(const Tensor& x) {
  require_rank(x, 3, "maxpool_group");
  const std::size_t m = x.dim(0), l = x.dim(1), c = x.dim(2);
  auto X = x.data();
  std::vector<double> out(m * c);
  std::vector<std::size_t> arg(m * c);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::size_t best = 0;
      double bv = X[(i * l) * c + ch];
      for (std::size_t j = 1; j < l; ++j) {
        const double v = X[(i * l + j) * c + ch];
        if (v > bv) bv = v, best = j;
      }
      out[i * c + ch] = bv;
      arg[i * c + ch] = (i * l + best) * c + ch;
    }
  return Tensor::make_result({m, c}, std::move(out), {x}, [arg = std::move(arg)](Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t i = 0; i < arg.size(); ++i) g[arg[i]] += self.grad[i];
  });
}

// ---- indexing / layout ------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  check_shape(shape);
  if (shape_numel(shape) != x.numel())
    throw DimensionError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  auto X = x.data();
  return Tensor::make_result(std::move(shape), std::vector<double>(X.begin(), X.end()), {x}, [](Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  require_rank(x, 2, "gather_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (rows.empty()) throw DimensionError("gather_rows: empty index list");
  auto X = x.data();
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * c);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= r) throw ArgumentError("gather_rows: row " + std::to_string(idx[i]) + " out of range " + std::to_string(r));
    std::copy_n(&X[idx[i] * c], c, &out[i * c]);
  }
  const std::size_t len = idx.size();
  return Tensor::make_result({len, c}, std::move(out), {x}, [idx = std::move(idx), c](Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < c; ++j) g[idx[i] * c + j] += self.grad[i * c + j];
  });
}

Tensor weighted_gather(const Tensor& x, std::span<const std::size_t> indices, std::span<const double> weights,
                       std::size_t k) {
  require_rank(x, 2, "weighted_gather");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (k == 0 || indices.size() != weights.size() || indices.empty() || indices.size() % k != 0)
    throw DimensionError("weighted_gather: indices/weights must be non-empty [M×K]");
  const std::size_t m = indices.size() / k;
  auto X = x.data();
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  std::vector<double> w(weights.begin(), weights.end());
  std::vector<double> out(m * c, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t t = 0; t < k; ++t) {
      const std::size_t row = idx[i * k + t];
      if (row >= r) throw ArgumentError("weighted_gather: row out of range");
      const double wt = w[i * k + t];
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += wt * X[row * c + j];
    }
  return Tensor::make_result({m, c}, std::move(out), {x},
                             [idx = std::move(idx), w = std::move(w), m, k, c](Node& self) {
                               double* g = pgrad(self, 0);
                               for (std::size_t i = 0; i < m; ++i)
                                 for (std::size_t t = 0; t < k; ++t) {
                                   const std::size_t row = idx[i * k + t];
                                   const double wt = w[i * k + t];
                                   for (std::size_t j = 0; j < c; ++j) g[row * c + j] += wt * self.grad[i * c + j];
                                 }
                             });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t n = parts[0].dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != n) throw DimensionError("concat_cols: row counts differ");
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> out(n * total);
  std::size_t off = 0;
  for (std::size_t t = 0; t < parts.size(); ++t) {
    auto P = parts[t].data();
    for (std::size_t i = 0; i < n; ++i) std::copy_n(&P[i * widths[t]], widths[t], &out[i * total + off]);
    off += widths[t];
  }
  return Tensor::make_result({n, total}, std::move(out), parts, [widths, n, total](Node& self) {
    std::size_t off = 0;
    for (std::size_t t = 0; t < widths.size(); ++t) {
      if (double* g = pgrad(self, t))
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < widths[t]; ++j) g[i * widths[t] + j] += self.grad[i * total + off + j];
      off += widths[t];
    }
  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  require_rank(x, 2, "slice_cols");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (begin >= end || end > c) throw DimensionError("slice_cols: bad column range");
  const std::size_t w = end - begin;
  auto X = x.data();
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(&X[i * c + begin], w, &out[i * w]);
  return Tensor::make_result({n, w}, std::move(out), {x}, [n, c, w, begin](Node& self) {
    double* g = pgrad(self, 0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * c + begin + j] += self.grad[i * w + j];
  });
}

Tensor standardize_cols(const Tensor& x, double eps) {
  require_rank(x, 2, "standardize_cols");
  const std::size_t n = x.dim(0), c = x.dim(1);
  auto X = x.data();
  std::vector<double> inv_std(c), out(n * c);
  for (std::size_t j = 0; j < c; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += X[i * c + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (X[i * c + j] - mu) * (X[i * c + j] - mu);
    var /= static_cast<double>(n);
    inv_std[j] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) out[i * c + j] = (X[i * c + j] - mu) * inv_std[j];
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [n, c, inv_std = std::move(inv_std)](Node& self) {
    double* g = pgrad(self, 0);
    const auto& Y = self.data;
    const auto& G = self.grad;
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j < c; ++j) {
      double gsum = 0.0, gysum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        gsum += G[i * c + j];
        gysum += G[i * c + j] * Y[i * c + j];
      }
      for (std::size_t i = 0; i < n; ++i)
        g[i * c + j] += inv_std[j] * (G[i * c + j] - inv_n * gsum - inv_n * Y[i * c + j] * gysum);
    }
  });
}

Tensor outer_rows(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "outer_rows");
  require_rank(b, 2, "outer_rows");
  const std::size_t p = a.dim(0), d = a.dim(1), c = b.dim(1);
  if (b.dim(0) != p) throw DimensionError("outer_rows: row counts differ");
  auto A = a.data();
  auto B = b.data();
  std::vector<double> out(p * d * c);
  for (std::size_t i = 0; i < p; ++i)
    for (std::size_t k = 0; k < d; ++k)
      for (std::size_t j = 0; j < c; ++j) out[(i * d + k) * c + j] = A[i * d + k] * B[i * c + j];
  return Tensor::make_result({p, d, c}, std::move(out), {a, b}, [p, d, c](Node& self) {
    const auto& A = self.parents[0]->data;
    const auto& B = self.parents[1]->data;
    double* ga = pgrad(self, 0);
    double* gb = pgrad(self, 1);
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t k = 0; k < d; ++k)
        for (std::size_t j = 0; j < c; ++j) {
          const double g = self.grad[(i * d + k) * c + j];
          if (ga) ga[i * d + k] += g * B[i * c + j];
          if (gb) gb[i * c + j] += g * A[i * d + k];
        }
  });
}

}  // namespace ptadet
