#pragma once
// Tape-based reverse-mode differentiation over Tensor values.
//
// A Graph records nodes in creation order, which is a topological order, and
// backward() walks them once in reverse. Graphs are single-threaded; distinct
// graphs may be driven from distinct threads.

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "itst/tensor/tensor.hpp"

namespace itst {

/// A named trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad();
};

/// Boolean keep-mask for softmax_rows; true entries participate.
class Mask {
 public:
  Mask() = default;
  Mask(std::size_t rows, std::size_t cols, bool keep = true);

  /// Row i keeps columns [0, i] (square causal mask).
  static Mask causal(std::size_t n);
  /// Row i keeps columns [0, limits[i]).
  static Mask prefix(std::size_t cols, std::span<const std::size_t> limits);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool keep(std::size_t r, std::size_t c) const { return keep_[r * cols_ + c] != 0; }
  void set(std::size_t r, std::size_t c, bool keep) { keep_[r * cols_ + c] = keep ? 1 : 0; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> keep_;
};

/// Additive surrogate for -infinity applied to masked logits.
inline constexpr double kMaskedLogit = -1e9;

struct Var {
  std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
  bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
};

enum class GradMode { kRecord, kInference };

class Graph {
 public:
  explicit Graph(GradMode mode = GradMode::kRecord);

  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;
  Graph(Graph&&) = default;
  Graph& operator=(Graph&&) = default;

  GradMode mode() const { return mode_; }
  std::size_t size() const { return nodes_.size(); }

  /// Leaf that never receives a gradient.
  Var constant(Tensor t);
  /// Leaf bound to a parameter; backward() accumulates into p.grad.
  Var param(Parameter& p);
  /// Leaf that receives a gradient readable through grad().
  Var variable(Tensor t);

  const Tensor& value(Var v) const;
  /// Gradient of the last backward() target wrt v; empty if v did not receive one.
  const Tensor& grad(Var v) const;

  // Linear algebra.
  Var matmul(Var a, Var b);
  /// a * b^T
  Var matmul_nt(Var a, Var b);

  // Elementwise.
  Var add(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double c);
  Var add_scalar(Var x, double c);
  Var sigmoid(Var x);
  Var relu(Var x);
  /// |x| with subgradient 0 at 0.
  Var abs(Var x);

  // Row operations.
  /// x + bias where bias is 1 x n and broadcast over rows.
  Var add_row(Var x, Var bias);
  Var softmax_rows(Var x, const Mask* mask = nullptr);
  /// Divides each row by its sum; a zero-sum row is a DegenerateRowError.
  Var normalize_rows(Var x);
  Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5);
  Var row_sum(Var x);
  Var sum(Var x);

  // Structural.
  Var embed(Var table, std::span<const int> ids);
  Var slice_cols(Var x, std::size_t begin, std::size_t count);
  Var concat_cols(std::span<const Var> parts);

  /// Summed negative log-likelihood of targets under row-wise softmax of logits.
  Var cross_entropy(Var logits, std::span<const int> targets);

  /// Seeds d(loss)/d(loss) = 1 and propagates. loss must be 1x1.
  void backward(Var loss);

 private:
  using BackwardFn = std::function<void(Graph&, std::uint32_t)>;

  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
    std::string_view op;
  };

  Var push(std::string_view op, Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
  Var push(std::string_view op, Tensor value, bool needs_grad, BackwardFn fn);
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  Tensor& grad_buffer(std::uint32_t id);
  const Node& node(Var v) const;

  GradMode mode_;
  std::vector<Node> nodes_;
};

}  // namespace itst
