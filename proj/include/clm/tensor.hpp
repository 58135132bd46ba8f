#pragma once

// Reverse-mode automatic differentiation over a per-step tape.
//
// Every operation records a node on a Graph. Backward rules are themselves
// written in terms of recorded operations, so gradients can be differentiated
// again (needed for second-order MAML). Outside of `gradients(..., true)` the
// backward pass runs with recording disabled and costs no more than a plain
// first-order sweep.

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "clm/error.hpp"

namespace clm {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Plain row-major storage. Rank 0 (scalar), 1 and 2 are used.
struct Array {
  Shape shape;
  std::vector<double> data;

  Array() = default;
  explicit Array(Shape s, double fill = 0.0);
  Array(Shape s, std::vector<double> values);

  static Array scalar(double v) { return Array({}, {v}); }

  std::size_t size() const { return data.size(); }
  std::size_t rows() const { return shape.size() == 2 ? shape[0] : 1; }
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool operator==(const Array& o) const = default;
};

// A learnable tensor with its gradient accumulator. `touched` records
// whether any backward pass reached it since the last zero_grad.
struct Parameter {
  std::string name;
  Array value;
  Array grad;
  bool touched = false;

  Parameter() = default;
  Parameter(std::string n, Array v);
  void zero_grad();
};

class Graph;

// Handle to a node on a Graph. Cheap to copy; valid until the graph is reset.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Graph* g, std::size_t id) : graph_(g), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }

  const Shape& shape() const;
  std::span<const double> values() const;
  double item() const;
  double at(std::size_t i) const { return values()[i]; }
  bool requires_grad() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const { return values().size(); }
  Array array() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Backward rule: given the node's own output and d(root)/d(output), fill
// d(root)/d(input_k) for each input. Entries left invalid count as zero.
using BackwardFn =
    std::function<void(const Tensor& out, const Tensor& grad_out, std::vector<Tensor>& grad_in)>;

class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Leaf holding a copy of the parameter value. Repeated calls return the
  // same node. backward() accumulates into the parameter's grad buffer.
  Tensor param(Parameter& p);
  Tensor constant(Array a);
  Tensor constant(Shape s, double fill) { return constant(Array(std::move(s), fill)); }
  // Differentiable leaf not tied to a Parameter.
  Tensor variable(Array a);

  Tensor record(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                BackwardFn backward);

  // Accumulate d(root)/d(param) into every reachable Parameter. Root must be
  // a scalar. Temporary nodes created by the sweep are discarded.
  void backward(const Tensor& root);

  // d(root)/d(wrt_k). With create_graph the returned tensors are themselves
  // differentiable functions of the graph's leaves.
  std::vector<Tensor> gradients(const Tensor& root, std::span<const Tensor> wrt,
                                bool create_graph);

  void reset();
  // Drop every node created after the graph had `size` nodes.
  void truncate(std::size_t size);
  std::size_t size() const { return nodes_.size(); }
  bool recording() const { return recording_; }

  class NoGradGuard {
   public:
    explicit NoGradGuard(Graph& g) : g_(g), prev_(g.recording_) { g.recording_ = false; }
    ~NoGradGuard() { g_.recording_ = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    Graph& g_;
    bool prev_;
  };

 private:
  friend class Tensor;
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<Tensor> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    Parameter* sink = nullptr;
  };

  std::vector<std::size_t> sweep(const Tensor& root, bool create_graph);

  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool recording_ = true;
};

// ---- operations ----------------------------------------------------------
// Shapes must match exactly unless an op states otherwise.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// x[m,n] + b[n] on every row: the one broadcast the library supports.
Tensor add_row(const Tensor& x, const Tensor& b);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor expand(const Tensor& scalar, const Shape& shape);
// Column sums of x[m,n] -> [n].
Tensor sum_rows(const Tensor& x);
// Row sums of x[m,n] -> [m].
Tensor row_sum(const Tensor& x);
// v[n] -> [m,n] with every row equal to v.
Tensor broadcast_rows(const Tensor& v, std::size_t m);
// v[m] -> [m,n] with every column equal to v.
Tensor broadcast_cols(const Tensor& v, std::size_t n);
Tensor reshape(const Tensor& a, const Shape& shape);

Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor clamp_min(const Tensor& a, double floor);

// Softmax over the last axis of a rank-1 or rank-2 tensor. `mask` (empty for
// none) has either one entry per column, shared by all rows, or one entry per
// element. Masked outputs are exactly 0; every row needs an unmasked entry.
Tensor softmax(const Tensor& x, std::span<const std::uint8_t> mask = {});
// Masked log-softmax; masked outputs are 0 and receive no gradient.
Tensor log_softmax(const Tensor& x, std::span<const std::uint8_t> mask = {});

// Element at flat index -> scalar.
Tensor pick(const Tensor& a, std::size_t index);
// Scalar placed at flat index of an otherwise-zero tensor.
Tensor scatter(const Tensor& scalar, std::size_t index, const Shape& shape);

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
Tensor scatter_add_rows(const Tensor& src, std::span<const std::size_t> ids, std::size_t rows);

Tensor slice_rows(const Tensor& a, std::size_t start, std::size_t count);
Tensor pad_rows(const Tensor& a, std::size_t start, std::size_t total);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t count);
Tensor pad_cols(const Tensor& a, std::size_t start, std::size_t total);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);

// Row i of a rank-2 tensor as a rank-1 tensor.
Tensor row(const Tensor& a, std::size_t i);
// Stack equal-length rank-1 tensors into [k, n].
Tensor stack(std::span<const Tensor> rows);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double c) { return scale(a, c); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

}  // namespace clm
