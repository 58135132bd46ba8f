#include "clm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace clm {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Array::Array(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Array::Array(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (data.size() != shape_size(shape)) {
    throw DimensionError("array of shape " + shape_str(shape) + " given " +
                         std::to_string(data.size()) + " values");
  }
}

Parameter::Parameter(std::string n, Array v)
    : name(std::move(n)), value(std::move(v)), grad(value.shape, 0.0) {}

void Parameter::zero_grad() {
  std::fill(grad.data.begin(), grad.data.end(), 0.0);
  touched = false;
}

// ---- Tensor ---------------------------------------------------------------

const Shape& Tensor::shape() const { return graph_->nodes_[id_].shape; }

std::span<const double> Tensor::values() const { return graph_->nodes_[id_].value; }

double Tensor::item() const {
  const auto& v = graph_->nodes_[id_].value;
  if (v.size() != 1) throw ContractViolation("item() on tensor of shape " + shape_str(shape()));
  return v[0];
}

bool Tensor::requires_grad() const { return graph_->nodes_[id_].requires_grad; }

Array Tensor::array() const {
  const auto& n = graph_->nodes_[id_];
  return Array(n.shape, n.value);
}

// ---- Graph ----------------------------------------------------------------

Tensor Graph::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Tensor(this, it->second);
  Node n;
  n.shape = p.value.shape;
  n.value = p.value.data;
  n.requires_grad = true;
  n.sink = &p;
  nodes_.push_back(std::move(n));
  param_nodes_[&p] = nodes_.size() - 1;
  return Tensor(this, nodes_.size() - 1);
}

Tensor Graph::constant(Array a) {
  Node n;
  n.shape = std::move(a.shape);
  n.value = std::move(a.data);
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Graph::variable(Array a) {
  Node n;
  n.shape = std::move(a.shape);
  n.value = std::move(a.data);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

Tensor Graph::record(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                     BackwardFn backward) {
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  if (recording_) {
    for (const auto& in : inputs) {
      if (&in.graph() != this) throw ContractViolation("tensors from different graphs combined");
      if (nodes_[in.id()].requires_grad) n.requires_grad = true;
    }
  }
  if (n.requires_grad) {
    n.inputs = std::move(inputs);
    n.backward = std::move(backward);
  }
  nodes_.push_back(std::move(n));
  return Tensor(this, nodes_.size() - 1);
}

void Graph::reset() {
  nodes_.clear();
  param_nodes_.clear();
  recording_ = true;
}

void Graph::truncate(std::size_t size) {
  if (size >= nodes_.size()) return;
  std::erase_if(param_nodes_, [size](const auto& kv) { return kv.second >= size; });
  nodes_.resize(size);
}

std::vector<std::size_t> Graph::sweep(const Tensor& root, bool create_graph) {
  constexpr auto none = std::numeric_limits<std::size_t>::max();
  if (&root.graph() != this) throw ContractViolation("root belongs to another graph");
  if (nodes_[root.id()].value.size() != 1 || !nodes_[root.id()].shape.empty()) {
    throw ContractViolation("backward from non-scalar root of shape " +
                            shape_str(nodes_[root.id()].shape));
  }
  const bool prev = recording_;
  recording_ = create_graph;
  std::vector<std::size_t> grads(root.id() + 1, none);
  grads[root.id()] = constant(Array::scalar(1.0)).id();
  std::vector<Tensor> gin;
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    if (grads[i] == none) continue;
    Node& node = nodes_[i];
    if (!node.requires_grad || !node.backward) continue;
    gin.assign(node.inputs.size(), Tensor());
    node.backward(Tensor(this, i), Tensor(this, grads[i]), gin);
    for (std::size_t k = 0; k < node.inputs.size(); ++k) {
      if (!gin[k].valid()) continue;
      const std::size_t in = nodes_[i].inputs[k].id();
      if (!nodes_[in].requires_grad) continue;
      if (grads[in] == none) {
        grads[in] = gin[k].id();
      } else {
        grads[in] = add(Tensor(this, grads[in]), gin[k]).id();
      }
    }
  }
  recording_ = prev;
  return grads;
}

void Graph::backward(const Tensor& root) {
  const std::size_t mark = nodes_.size();
  const auto grads = sweep(root, false);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    Parameter* p = nodes_[i].sink;
    if (!p || grads[i] == std::numeric_limits<std::size_t>::max()) continue;
    const auto& g = nodes_[grads[i]].value;
    if (p->grad.shape != p->value.shape) p->grad = Array(p->value.shape, 0.0);
    for (std::size_t k = 0; k < g.size(); ++k) p->grad.data[k] += g[k];
    p->touched = true;
  }
  nodes_.resize(mark);
}

std::vector<Tensor> Graph::gradients(const Tensor& root, std::span<const Tensor> wrt,
                                     bool create_graph) {
  const auto grads = sweep(root, create_graph);
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const auto& w : wrt) {
    if (w.id() < grads.size() && grads[w.id()] != std::numeric_limits<std::size_t>::max()) {
      out.emplace_back(this, grads[w.id()]);
    } else {
      out.push_back(constant(Array(w.shape(), 0.0)));
    }
  }
  return out;
}

// ---- operations -----------------------------------------------------------

namespace {

Graph& same_graph(const Tensor& a, const Tensor& b) {
  if (&a.graph() != &b.graph()) throw ContractViolation("tensors from different graphs combined");
  return a.graph();
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(const char* op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(a.shape()));
  }
}

template <class F>
std::vector<double> map_values(const Tensor& a, F f) {
  auto v = a.values();
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = f(v[i]);
  return out;
}

Tensor as_matrix(const Tensor& t) {
  if (t.rank() == 2) return t;
  return reshape(t, {1, t.size()});
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  Graph& g = same_graph(a, b);
  require_same_shape("add", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return g.record(a.shape(), std::move(out), {a, b},
                  [](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                    gi[0] = go;
                    gi[1] = go;
                  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  Graph& g = same_graph(a, b);
  require_same_shape("sub", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return g.record(a.shape(), std::move(out), {a, b},
                  [b](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                    gi[0] = go;
                    if (b.requires_grad()) gi[1] = neg(go);
                  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  Graph& g = same_graph(a, b);
  require_same_shape("mul", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return g.record(a.shape(), std::move(out), {a, b},
                  [a, b](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                    if (a.requires_grad()) gi[0] = mul(go, b);
                    if (b.requires_grad()) gi[1] = mul(go, a);
                  });
}

Tensor scale(const Tensor& a, double c) {
  return a.graph().record(a.shape(), map_values(a, [c](double x) { return x * c; }), {a},
                          [c](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) { gi[0] = scale(go, c); });
}

Tensor add_scalar(const Tensor& a, double c) {
  return a.graph().record(a.shape(), map_values(a, [c](double x) { return x + c; }), {a},
                          [](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) { gi[0] = go; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  Graph& g = same_graph(a, b);
  if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  auto av = a.values(), bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      const double* brow = bv.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  return g.record({m, n}, std::move(out), {a, b},
                  [a, b](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                    if (a.requires_grad()) gi[0] = matmul(go, transpose(b));
                    if (b.requires_grad()) gi[1] = matmul(transpose(a), go);
                  });
}

Tensor transpose(const Tensor& a) {
  require_rank("transpose", a, 2);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  auto av = a.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = av[i * n + j];
  return a.graph().record({n, m}, std::move(out), {a},
                          [](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) { gi[0] = transpose(go); });
}

Tensor add_row(const Tensor& x, const Tensor& b) {
  Graph& g = same_graph(x, b);
  if (x.rank() != 2 || b.rank() != 1 || x.shape()[1] != b.shape()[0]) {
    throw DimensionError("add_row: cannot add " + shape_str(b.shape()) + " to rows of " +
                         shape_str(x.shape()));
  }
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  auto xv = x.values(), bv = b.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = xv[i * n + j] + bv[j];
  return g.record(x.shape(), std::move(out), {x, b},
                  [b](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                    gi[0] = go;
                    if (b.requires_grad()) gi[1] = sum_rows(go);
                  });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  Shape shape = a.shape();
  return a.graph().record({}, {s}, {a}, [shape](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
    gi[0] = expand(go, shape);
  });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor expand(const Tensor& scalar, const Shape& shape) {
  const double v = scalar.item();
  return scalar.graph().record(shape, std::vector<double>(shape_size(shape), v), {scalar},
                               [](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) { gi[0] = sum(go); });
}

Tensor sum_rows(const Tensor& x) {
  require_rank("sum_rows", x, 2);
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  auto xv = x.values();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += xv[i * n + j];
  return x.graph().record({n}, std::move(out), {x}, [m](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
    gi[0] = broadcast_rows(go, m);
  });
}

Tensor row_sum(const Tensor& x) {
  require_rank("row_sum", x, 2);
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  auto xv = x.values();
  std::vector<double> out(m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i] += xv[i * n + j];
  return x.graph().record({m}, std::move(out), {x}, [n](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
    gi[0] = broadcast_cols(go, n);
  });
}

Tensor broadcast_rows(const Tensor& v, std::size_t m) {
  require_rank("broadcast_rows", v, 1);
  const std::size_t n = v.shape()[0];
  auto vv = v.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) std::copy(vv.begin(), vv.end(), out.begin() + i * n);
  return v.graph().record({m, n}, std::move(out), {v},
                          [](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) { gi[0] = sum_rows(go); });
}

Tensor broadcast_cols(const Tensor& v, std::size_t n) {
  require_rank("broadcast_cols", v, 1);
  const std::size_t m = v.shape()[0];
  auto vv = v.values();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i) std::fill_n(out.begin() + i * n, n, vv[i]);
  return v.graph().record({m, n}, std::move(out), {v},
                          [](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) { gi[0] = row_sum(go); });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  auto av = a.values();
  Shape original = a.shape();
  return a.graph().record(shape, std::vector<double>(av.begin(), av.end()), {a},
                          [original](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                            gi[0] = reshape(go, original);
                          });
}

}  // namespace clm

namespace clm {

namespace {

template <class F>
Tensor unary(const Tensor& a, F f, BackwardFn backward) {
  return a.graph().record(a.shape(), map_values(a, f), {a}, std::move(backward));
}

Tensor mask_constant(Graph& g, const Shape& shape, std::vector<double> m) {
  return g.constant(Array(shape, std::move(m)));
}

}  // namespace

Tensor tanh(const Tensor& a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](const Tensor& out, const Tensor& go, std::vector<Tensor>& gi) {
                 gi[0] = mul(go, add_scalar(neg(mul(out, out)), 1.0));
               });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [a](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                 gi[0] = mul(go, mask_constant(a.graph(), a.shape(),
                                               map_values(a, [](double x) { return x > 0.0 ? 1.0 : 0.0; })));
               });
}

Tensor exp(const Tensor& a) {
  return unary(a, [](double x) { return std::exp(x); },
               [](const Tensor& out, const Tensor& go, std::vector<Tensor>& gi) { gi[0] = mul(go, out); });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); },
               [a](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                 gi[0] = mul(go, reciprocal(a));
               });
}

Tensor sqrt(const Tensor& a) {
  return unary(a, [](double x) { return std::sqrt(x); },
               [](const Tensor& out, const Tensor& go, std::vector<Tensor>& gi) {
                 gi[0] = mul(go, scale(reciprocal(out), 0.5));
               });
}

Tensor reciprocal(const Tensor& a) {
  return unary(a, [](double x) { return 1.0 / x; },
               [](const Tensor& out, const Tensor& go, std::vector<Tensor>& gi) {
                 gi[0] = mul(go, neg(mul(out, out)));
               });
}

Tensor clamp_min(const Tensor& a, double floor) {
  // NaN passes through so a broken forward pass is still detected downstream.
  return unary(a, [floor](double x) { return x < floor ? floor : x; },
               [a, floor](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                 gi[0] = mul(go, mask_constant(a.graph(), a.shape(), map_values(a, [floor](double x) {
                                                 return x < floor ? 0.0 : 1.0;
                                               })));
               });
}

namespace {

// Expands a per-column or per-element mask to one flag per element.
std::vector<std::uint8_t> full_mask(const char* op, std::span<const std::uint8_t> mask,
                                    std::size_t rows, std::size_t cols) {
  if (mask.empty()) return std::vector<std::uint8_t>(rows * cols, 1);
  if (mask.size() == rows * cols) return {mask.begin(), mask.end()};
  if (mask.size() == cols) {
    std::vector<std::uint8_t> out(rows * cols);
    for (std::size_t i = 0; i < rows; ++i) std::copy(mask.begin(), mask.end(), out.begin() + i * cols);
    return out;
  }
  throw DimensionError(std::string(op) + ": mask of length " + std::to_string(mask.size()) +
                       " for " + std::to_string(rows) + "x" + std::to_string(cols) + " input");
}

struct RowStats {
  std::vector<double> max;
  std::vector<double> sum;  // sum of exp(x - max) over unmasked entries
};

// Masked entries are skipped entirely, never compared against the max.
RowStats row_stats(const char* op, std::span<const double> x, const std::vector<std::uint8_t>& m,
                   std::size_t rows, std::size_t cols) {
  RowStats s{std::vector<double>(rows), std::vector<double>(rows, 0.0)};
  for (std::size_t i = 0; i < rows; ++i) {
    bool any = false;
    double mx = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      if (!m[i * cols + j]) continue;
      const double v = x[i * cols + j];
      if (!any || v > mx) mx = v;
      any = true;
    }
    if (!any) throw InvalidInput(std::string(op) + ": every position of row " + std::to_string(i) + " is masked");
    s.max[i] = mx;
    for (std::size_t j = 0; j < cols; ++j)
      if (m[i * cols + j]) s.sum[i] += std::exp(x[i * cols + j] - mx);
  }
  return s;
}

bool all_set(const std::vector<std::uint8_t>& m) {
  return std::all_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; });
}

Tensor mask_tensor(Graph& g, const Shape& shape, const std::vector<std::uint8_t>& m) {
  std::vector<double> v(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) v[i] = m[i] ? 1.0 : 0.0;
  return g.constant(Array(shape, std::move(v)));
}

}  // namespace

Tensor softmax(const Tensor& x, std::span<const std::uint8_t> mask) {
  if (x.rank() != 1 && x.rank() != 2) throw DimensionError("softmax: rank must be 1 or 2, got " + shape_str(x.shape()));
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / std::max<std::size_t>(cols, 1);
  auto m = full_mask("softmax", mask, rows, cols);
  auto xv = x.values();
  const auto st = row_stats("softmax", xv, m, rows, cols);
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      if (m[i * cols + j]) out[i * cols + j] = std::exp(xv[i * cols + j] - st.max[i]) / st.sum[i];
  return x.graph().record(x.shape(), std::move(out), {x},
                          [](const Tensor& out, const Tensor& go, std::vector<Tensor>& gi) {
                            // dx = y * (g - rowsum(g * y)); masked y are 0.
                            Tensor y = as_matrix(out), g = as_matrix(go);
                            Tensor dot = row_sum(mul(g, y));
                            Tensor dx = mul(y, sub(g, broadcast_cols(dot, y.shape()[1])));
                            gi[0] = out.rank() == 2 ? dx : reshape(dx, out.shape());
                          });
}

Tensor log_softmax(const Tensor& x, std::span<const std::uint8_t> mask) {
  if (x.rank() != 1 && x.rank() != 2) throw DimensionError("log_softmax: rank must be 1 or 2, got " + shape_str(x.shape()));
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.size() / std::max<std::size_t>(cols, 1);
  auto m = full_mask("log_softmax", mask, rows, cols);
  auto xv = x.values();
  const auto st = row_stats("log_softmax", xv, m, rows, cols);
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t i = 0; i < rows; ++i) {
    const double lse = std::log(st.sum[i]);
    for (std::size_t j = 0; j < cols; ++j)
      if (m[i * cols + j]) out[i * cols + j] = xv[i * cols + j] - st.max[i] - lse;
  }
  const bool masked = !all_set(m);
  return x.graph().record(
      x.shape(), std::move(out), {x},
      [m, masked](const Tensor& out, const Tensor& go, std::vector<Tensor>& gi) {
        // dx = g - p * rowsum(g), restricted to unmasked entries.
        Graph& graph = out.graph();
        Tensor y = as_matrix(out), g = as_matrix(go);
        Tensor p = exp(y);
        if (masked) {
          Tensor mt = mask_tensor(graph, y.shape(), m);
          p = mul(p, mt);
          g = mul(g, mt);
        }
        Tensor dx = sub(g, mul(p, broadcast_cols(row_sum(g), y.shape()[1])));
        gi[0] = out.rank() == 2 ? dx : reshape(dx, out.shape());
      });
}

Tensor pick(const Tensor& a, std::size_t index) {
  if (index >= a.size()) {
    throw RangeError("pick: index " + std::to_string(index) + " outside " + shape_str(a.shape()));
  }
  Shape shape = a.shape();
  return a.graph().record({}, {a.at(index)}, {a},
                          [index, shape](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                            gi[0] = scatter(go, index, shape);
                          });
}

Tensor scatter(const Tensor& scalar, std::size_t index, const Shape& shape) {
  if (index >= shape_size(shape)) {
    throw RangeError("scatter: index " + std::to_string(index) + " outside " + shape_str(shape));
  }
  std::vector<double> out(shape_size(shape), 0.0);
  out[index] = scalar.item();
  return scalar.graph().record(shape, std::move(out), {scalar},
                               [index](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                                 gi[0] = pick(go, index);
                               });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require_rank("gather_rows", table, 2);
  const std::size_t rows = table.shape()[0], d = table.shape()[1];
  auto tv = table.values();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) {
      throw RangeError("gather_rows: id " + std::to_string(ids[i]) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
    std::copy_n(tv.begin() + ids[i] * d, d, out.begin() + i * d);
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return table.graph().record({ids.size(), d}, std::move(out), {table},
                              [idv, rows](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                                gi[0] = scatter_add_rows(go, idv, rows);
                              });
}

Tensor scatter_add_rows(const Tensor& src, std::span<const std::size_t> ids, std::size_t rows) {
  require_rank("scatter_add_rows", src, 2);
  if (src.shape()[0] != ids.size()) {
    throw DimensionError("scatter_add_rows: " + std::to_string(ids.size()) + " ids for " +
                         shape_str(src.shape()));
  }
  const std::size_t d = src.shape()[1];
  auto sv = src.values();
  std::vector<double> out(rows * d, 0.0);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) throw RangeError("scatter_add_rows: id " + std::to_string(ids[i]) + " out of range");
    for (std::size_t j = 0; j < d; ++j) out[ids[i] * d + j] += sv[i * d + j];
  }
  std::vector<std::size_t> idv(ids.begin(), ids.end());
  return src.graph().record({rows, d}, std::move(out), {src},
                            [idv](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                              gi[0] = gather_rows(go, idv);
                            });
}

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count) {
  require_rank("slice_rows", a, 2);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (start + count > m) {
    throw RangeError("slice_rows: rows [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") of " + shape_str(a.shape()));
  }
  auto av = a.values();
  std::vector<double> out(av.begin() + start * n, av.begin() + (start + count) * n);
  return a.graph().record({count, n}, std::move(out), {a},
                          [start, m](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                            gi[0] = pad_rows(go, start, m);
                          });
}

Tensor pad_rows(const Tensor& a, std::size_t start, std::size_t total) {
  require_rank("pad_rows", a, 2);
  const std::size_t c = a.shape()[0], n = a.shape()[1];
  if (start + c > total) throw RangeError("pad_rows: block does not fit");
  auto av = a.values();
  std::vector<double> out(total * n, 0.0);
  std::copy(av.begin(), av.end(), out.begin() + start * n);
  return a.graph().record({total, n}, std::move(out), {a},
                          [start, c](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                            gi[0] = slice_rows(go, start, c);
                          });
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count) {
  require_rank("slice_cols", a, 2);
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  if (start + count > n) {
    throw RangeError("slice_cols: cols [" + std::to_string(start) + "," + std::to_string(start + count) +
                     ") of " + shape_str(a.shape()));
  }
  auto av = a.values();
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(av.begin() + i * n + start, count, out.begin() + i * count);
  return a.graph().record({m, count}, std::move(out), {a},
                          [start, n](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                            gi[0] = pad_cols(go, start, n);
                          });
}

Tensor pad_cols(const Tensor& a, std::size_t start, std::size_t total) {
  require_rank("pad_cols", a, 2);
  const std::size_t m = a.shape()[0], c = a.shape()[1];
  if (start + c > total) throw RangeError("pad_cols: block does not fit");
  auto av = a.values();
  std::vector<double> out(m * total, 0.0);
  for (std::size_t i = 0; i < m; ++i) std::copy_n(av.begin() + i * c, c, out.begin() + i * total + start);
  return a.graph().record({m, total}, std::move(out), {a},
                          [start, c](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                            gi[0] = slice_cols(go, start, c);
                          });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw InvalidInput("concat_rows: no inputs");
  const std::size_t n = parts[0].shape().at(1);
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    require_rank("concat_rows", p, 2);
    if (p.shape()[1] != n) throw DimensionError("concat_rows: column mismatch " + shape_str(p.shape()));
    offsets.push_back(total);
    total += p.shape()[0];
  }
  std::vector<double> out;
  out.reserve(total * n);
  for (const auto& p : parts) out.insert(out.end(), p.values().begin(), p.values().end());
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  std::vector<std::size_t> counts;
  for (const auto& p : parts) counts.push_back(p.shape()[0]);
  return parts[0].graph().record({total, n}, std::move(out), std::move(inputs),
                                 [offsets, counts](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                                   for (std::size_t k = 0; k < offsets.size(); ++k)
                                     gi[k] = slice_rows(go, offsets[k], counts[k]);
                                 });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw InvalidInput("concat_cols: no inputs");
  const std::size_t m = parts[0].shape().at(0);
  std::size_t total = 0;
  std::vector<std::size_t> offsets, counts;
  for (const auto& p : parts) {
    require_rank("concat_cols", p, 2);
    if (p.shape()[0] != m) throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()));
    offsets.push_back(total);
    counts.push_back(p.shape()[1]);
    total += p.shape()[1];
  }
  std::vector<double> out(m * total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].values();
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(pv.begin() + i * counts[k], counts[k], out.begin() + i * total + offsets[k]);
  }
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return parts[0].graph().record({m, total}, std::move(out), std::move(inputs),
                                 [offsets, counts](const Tensor&, const Tensor& go, std::vector<Tensor>& gi) {
                                   for (std::size_t k = 0; k < offsets.size(); ++k)
                                     gi[k] = slice_cols(go, offsets[k], counts[k]);
                                 });
}

Tensor row(const Tensor& a, std::size_t i) {
  require_rank("row", a, 2);
  return reshape(slice_rows(a, i, 1), {a.shape()[1]});
}

Tensor stack(std::span<const Tensor> rows) {
  std::vector<Tensor> parts;
  parts.reserve(rows.size());
  for (const auto& r : rows) {
    require_rank("stack", r, 1);
    parts.push_back(reshape(r, {1, r.size()}));
  }
  return concat_rows(parts);
}

}  // namespace clm
