#include "itst/tensor/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "itst/errors.hpp"
#include "itst/tensor/kernels.hpp"

namespace itst {

void Parameter::zero_grad() {
  if (!grad.same_shape(value)) {
    grad = Tensor(value.shape(), std::vector<double>(value.size(), 0.0));
  } else {
    grad.fill(0.0);
  }
}

Mask::Mask(std::size_t rows, std::size_t cols, bool keep)
    : rows_(rows), cols_(cols), keep_(rows * cols, keep ? 1 : 0) {}

Mask Mask::causal(std::size_t n) {
  Mask m(n, n, false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) m.set(i, j, true);
  }
  return m;
}

Mask Mask::prefix(std::size_t cols, std::span<const std::size_t> limits) {
  Mask m(limits.size(), cols, false);
  for (std::size_t i = 0; i < limits.size(); ++i) {
    const std::size_t lim = std::min(limits[i], cols);
    for (std::size_t j = 0; j < lim; ++j) m.set(i, j, true);
  }
  return m;
}

Graph::Graph(GradMode mode) : mode_(mode) { nodes_.reserve(256); }

const Graph::Node& Graph::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw IndexError("invalid graph variable");
  return nodes_[v.id];
}

const Tensor& Graph::value(Var v) const { return node(v).value; }
const Tensor& Graph::grad(Var v) const { return node(v).grad; }

Var Graph::push(std::string_view op, Tensor value, bool needs_grad, BackwardFn fn) {
  if (!value.all_finite()) {
    throw NonFiniteError(std::string("non-finite value produced by ") + std::string(op));
  }
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad && mode_ == GradMode::kRecord;
  if (n.needs_grad) n.backward = std::move(fn);
  n.op = op;
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Graph::push(std::string_view op, Tensor value, std::initializer_list<Var> inputs,
                BackwardFn fn) {
  bool ng = false;
  for (Var v : inputs) ng = ng || nodes_[v.id].needs_grad;
  return push(op, std::move(value), ng, std::move(fn));
}

Tensor& Graph::grad_buffer(std::uint32_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), std::vector<double>(n.value.size(), 0.0));
  return n.grad;
}

Var Graph::constant(Tensor t) { return push("constant", std::move(t), false, nullptr); }

Var Graph::variable(Tensor t) { return push("variable", std::move(t), true, nullptr); }

Var Graph::param(Parameter& p) {
  if (mode_ == GradMode::kRecord && !p.grad.same_shape(p.value)) p.zero_grad();
  Var v = push("param", p.value, true, nullptr);
  nodes_[v.id].param = &p;
  return v;
}

namespace {

void require_2d_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                         b.shape_string());
  }
}

}  // namespace

Var Graph::matmul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ " + av.shape_string() + " * " +
                         bv.shape_string());
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor out(m, n);
  kernels::active().gemm_acc(m, n, k, av.data(), k, bv.data(), n, out.data(), n);
  return push("matmul", std::move(out), {a, b}, [a, b, m, k, n](Graph& g, std::uint32_t self) {
    const auto& kt = kernels::active();
    const Tensor& go = g.nodes_[self].grad;
    if (g.needs(a)) {
      const Tensor bt = g.nodes_[b.id].value.transposed();
      kt.gemm_acc(m, k, n, go.data(), n, bt.data(), k, g.grad_buffer(a.id).data(), k);
    }
    if (g.needs(b)) {
      kt.gemm_tn_acc(k, n, m, g.nodes_[a.id].value.data(), k, go.data(), n,
                     g.grad_buffer(b.id).data(), n);
    }
  });
}

Var Graph::matmul_nt(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: inner dimensions differ " + av.shape_string() + " * " +
                         bv.shape_string() + "^T");
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  Tensor out(m, n);
  const Tensor bt = bv.transposed();
  kernels::active().gemm_acc(m, n, k, av.data(), k, bt.data(), n, out.data(), n);
  return push("matmul_nt", std::move(out), {a, b}, [a, b, m, k, n](Graph& g, std::uint32_t self) {
    const auto& kt = kernels::active();
    const Tensor& go = g.nodes_[self].grad;
    if (g.needs(a)) {
      kt.gemm_acc(m, k, n, go.data(), n, g.nodes_[b.id].value.data(), k,
                  g.grad_buffer(a.id).data(), k);
    }
    if (g.needs(b)) {
      kt.gemm_tn_acc(n, k, m, go.data(), n, g.nodes_[a.id].value.data(), k,
                     g.grad_buffer(b.id).data(), k);
    }
  });
}

Var Graph::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_2d_same(av, bv, "add");
  Tensor out(av.rows(), av.cols());
  kernels::active().add(out.size(), av.data(), bv.data(), out.data());
  return push("add", std::move(out), {a, b}, [a, b](Graph& g, std::uint32_t self) {
    const auto& kt = kernels::active();
    const Tensor& go = g.nodes_[self].grad;
    if (g.needs(a)) kt.axpy(go.size(), 1.0, go.data(), g.grad_buffer(a.id).data());
    if (g.needs(b)) kt.axpy(go.size(), 1.0, go.data(), g.grad_buffer(b.id).data());
  });
}

Var Graph::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_2d_same(av, bv, "mul");
  Tensor out(av.rows(), av.cols());
  kernels::active().mul(out.size(), av.data(), bv.data(), out.data());
  return push("mul", std::move(out), {a, b}, [a, b](Graph& g, std::uint32_t self) {
    const auto& kt = kernels::active();
    const Tensor& go = g.nodes_[self].grad;
    if (g.needs(a)) {
      kt.mul_acc(go.size(), go.data(), g.nodes_[b.id].value.data(), g.grad_buffer(a.id).data());
    }
    if (g.needs(b)) {
      kt.mul_acc(go.size(), go.data(), g.nodes_[a.id].value.data(), g.grad_buffer(b.id).data());
    }
  });
}

Var Graph::scale(Var x, double c) {
  const Tensor& xv = value(x);
  Tensor out(xv.rows(), xv.cols());
  kernels::active().scale(out.size(), c, xv.data(), out.data());
  return push("scale", std::move(out), {x}, [x, c](Graph& g, std::uint32_t self) {
    const Tensor& go = g.nodes_[self].grad;
    kernels::active().axpy(go.size(), c, go.data(), g.grad_buffer(x.id).data());
  });
}

Var Graph::add_scalar(Var x, double c) {
  Tensor out = value(x);
  for (double& v : out.values()) v += c;
  return push("add_scalar", std::move(out), {x}, [x](Graph& g, std::uint32_t self) {
    const Tensor& go = g.nodes_[self].grad;
    kernels::active().axpy(go.size(), 1.0, go.data(), g.grad_buffer(x.id).data());
  });
}

Var Graph::sigmoid(Var x) {
  Tensor out = value(x);
  for (double& v : out.values()) v = 1.0 / (1.0 + std::exp(-v));
  return push("sigmoid", std::move(out), {x}, [x](Graph& g, std::uint32_t self) {
    const Tensor& go = g.nodes_[self].grad;
    const Tensor& y = g.nodes_[self].value;
    Tensor& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * y[i] * (1.0 - y[i]);
  });
}

Var Graph::relu(Var x) {
  Tensor out = value(x);
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return push("relu", std::move(out), {x}, [x](Graph& g, std::uint32_t self) {
    const Tensor& go = g.nodes_[self].grad;
    const Tensor& xv = g.nodes_[x.id].value;
    Tensor& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < go.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += go[i];
    }
  });
}

Var Graph::abs(Var x) {
  Tensor out = value(x);
  for (double& v : out.values()) v = std::fabs(v);
  return push("abs", std::move(out), {x}, [x](Graph& g, std::uint32_t self) {
    const Tensor& go = g.nodes_[self].grad;
    const Tensor& xv = g.nodes_[x.id].value;
    Tensor& gx = g.grad_buffer(x.id);
    for (std::size_t i = 0; i < go.size(); ++i) {
      if (xv[i] > 0.0) {
        gx[i] += go[i];
      } else if (xv[i] < 0.0) {
        gx[i] -= go[i];
      }
    }
  });
}

Var Graph::add_row(Var x, Var bias) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(bias);
  if (bv.size() != xv.cols()) {
    throw DimensionError("add_row: bias " + bv.shape_string() + " vs input " + xv.shape_string());
  }
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out(m, n);
  const auto& kt = kernels::active();
  for (std::size_t r = 0; r < m; ++r) kt.add(n, xv.data() + r * n, bv.data(), out.data() + r * n);
  return push("add_row", std::move(out), {x, bias}, [x, bias, m, n](Graph& g, std::uint32_t self) {
    const auto& kt = kernels::active();
    const Tensor& go = g.nodes_[self].grad;
    if (g.needs(x)) kt.axpy(go.size(), 1.0, go.data(), g.grad_buffer(x.id).data());
    if (g.needs(bias)) {
      double* gb = g.grad_buffer(bias.id).data();
      for (std::size_t r = 0; r < m; ++r) kt.axpy(n, 1.0, go.data() + r * n, gb);
    }
  });
}

Var Graph::softmax_rows(Var x, const Mask* mask) {
  const Tensor& xv = value(x);
  const std::size_t m = xv.rows(), n = xv.cols();
  if (mask != nullptr && (mask->rows() != m || mask->cols() != n)) {
    throw DimensionError("softmax_rows: mask shape does not match " + xv.shape_string());
  }
  Tensor out(m, n);
  for (std::size_t r = 0; r < m; ++r) {
    const double* in = xv.data() + r * n;
    double* o = out.data() + r * n;
    bool any = false;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) {
      const bool keep = mask == nullptr || mask->keep(r, c);
      o[c] = keep ? in[c] : in[c] + kMaskedLogit;
      any = any || keep;
      mx = std::max(mx, o[c]);
    }
    if (!any) throw DegenerateRowError("softmax_rows: row " + std::to_string(r) + " fully masked");
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      o[c] = std::exp(o[c] - mx);
      total += o[c];
    }
    const double inv = 1.0 / total;
    for (std::size_t c = 0; c < n; ++c) {
      o[c] = (mask == nullptr || mask->keep(r, c)) ? o[c] * inv : 0.0;
    }
  }
  return push("softmax_rows", std::move(out), {x}, [x, m, n](Graph& g, std::uint32_t self) {
    const Tensor& go = g.nodes_[self].grad;
    const Tensor& y = g.nodes_[self].value;
    Tensor& gx = g.grad_buffer(x.id);
    for (std::size_t r = 0; r < m; ++r) {
      const double* yr = y.data() + r * n;
      const double* gr = go.data() + r * n;
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += yr[c] * gr[c];
      double* out = gx.data() + r * n;
      for (std::size_t c = 0; c < n; ++c) out[c] += yr[c] * (gr[c] - dot);
    }
  });
}

Var Graph::normalize_rows(Var x) {
  const Tensor& xv = value(x);
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out(m, n);
  std::vector<double> sums(m);
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += xv(r, c);
    if (s == 0.0) {
      throw DegenerateRowError("normalize_rows: row " + std::to_string(r) + " has zero mass");
    }
    sums[r] = s;
    for (std::size_t c = 0; c < n; ++c) out(r, c) = xv(r, c) / s;
  }
  return push("normalize_rows", std::move(out), {x},
              [x, m, n, sums = std::move(sums)](Graph& g, std::uint32_t self) {
                const Tensor& go = g.nodes_[self].grad;
                const Tensor& y = g.nodes_[self].value;
                Tensor& gx = g.grad_buffer(x.id);
                for (std::size_t r = 0; r < m; ++r) {
                  double dot = 0.0;
                  for (std::size_t c = 0; c < n; ++c) dot += go(r, c) * y(r, c);
                  for (std::size_t c = 0; c < n; ++c) gx(r, c) += (go(r, c) - dot) / sums[r];
                }
              });
}

Var Graph::layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = value(x);
  const Tensor& gv = value(gain);
  const Tensor& bv = value(bias);
  const std::size_t m = xv.rows(), n = xv.cols();
  if (gv.size() != n || bv.size() != n) {
    throw DimensionError("layer_norm: gain/bias width does not match " + xv.shape_string());
  }
  Tensor out(m, n);
  auto xhat = std::make_shared<Tensor>(m, n);
  std::vector<double> rstd(m);
  for (std::size_t r = 0; r < m; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += xv(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      const double d = xv(r, c) - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (xv(r, c) - mean) * rstd[r];
      (*xhat)(r, c) = h;
      out(r, c) = h * gv[c] + bv[c];
    }
  }
  return push("layer_norm", std::move(out), {x, gain, bias},
              [x, gain, bias, m, n, xhat, rstd = std::move(rstd)](Graph& g, std::uint32_t self) {
                const Tensor& go = g.nodes_[self].grad;
                const Tensor& gv = g.nodes_[gain.id].value;
                if (g.needs(gain) || g.needs(bias)) {
                  Tensor& gg = g.grad_buffer(gain.id);
                  Tensor& gb = g.grad_buffer(bias.id);
                  for (std::size_t r = 0; r < m; ++r) {
                    for (std::size_t c = 0; c < n; ++c) {
                      gg[c] += go(r, c) * (*xhat)(r, c);
                      gb[c] += go(r, c);
                    }
                  }
                }
                if (!g.needs(x)) return;
                Tensor& gx = g.grad_buffer(x.id);
                const double inv_n = 1.0 / static_cast<double>(n);
                for (std::size_t r = 0; r < m; ++r) {
                  double mean_d = 0.0, mean_dx = 0.0;
                  for (std::size_t c = 0; c < n; ++c) {
                    const double d = go(r, c) * gv[c];
                    mean_d += d;
                    mean_dx += d * (*xhat)(r, c);
                  }
                  mean_d *= inv_n;
                  mean_dx *= inv_n;
                  for (std::size_t c = 0; c < n; ++c) {
                    const double d = go(r, c) * gv[c];
                    gx(r, c) += rstd[r] * (d - mean_d - (*xhat)(r, c) * mean_dx);
                  }
                }
              });
}

Var Graph::row_sum(Var x) {
  const Tensor& xv = value(x);
  const std::size_t m = xv.rows(), n = xv.cols();
  Tensor out(m, 1);
  for (std::size_t r = 0; r < m; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += xv(r, c);
    out(r, 0) = s;
  }
  return push("row_sum", std::move(out), {x}, [x, m, n](Graph& g, std::uint32_t self) {
    const Tensor& go = g.nodes_[self].grad;
    Tensor& gx = g.grad_buffer(x.id);
    for (std::size_t r = 0; r < m; ++r) {
      for (std::size_t c = 0; c < n; ++c) gx(r, c) += go(r, 0);
    }
  });
}

Var Graph::sum(Var x) {
  double s = 0.0;
  for (double v : value(x).values()) s += v;
  return push("sum", Tensor::scalar(s), {x}, [x](Graph& g, std::uint32_t self) {
    const double go = g.nodes_[self].grad[0];
    Tensor& gx = g.grad_buffer(x.id);
    for (double& v : gx.values()) v += go;
  });
}

Var Graph::embed(Var table, std::span<const int> ids) {
  const Tensor& tv = value(table);
  const std::size_t n = tv.cols();
  Tensor out(ids.size(), n);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= tv.rows()) {
      throw IndexError("embed: id " + std::to_string(ids[r]) + " outside table of " +
                       std::to_string(tv.rows()) + " rows");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(ids[r]) * n, n, out.data() + r * n);
  }
  return push("embed", std::move(out), {table},
              [table, n, rows = std::vector<int>(ids.begin(), ids.end())](Graph& g,
                                                                           std::uint32_t self) {
                const Tensor& go = g.nodes_[self].grad;
                Tensor& gt = g.grad_buffer(table.id);
                for (std::size_t r = 0; r < rows.size(); ++r) {
                  kernels::active().axpy(n, 1.0, go.data() + r * n,
                                         gt.data() + static_cast<std::size_t>(rows[r]) * n);
                }
              });
}

Var Graph::slice_cols(Var x, std::size_t begin, std::size_t count) {
  const Tensor& xv = value(x);
  const std::size_t m = xv.rows(), n = xv.cols();
  if (begin + count > n) throw IndexError("slice_cols past end of " + xv.shape_string());
  Tensor out(m, count);
  for (std::size_t r = 0; r < m; ++r) std::copy_n(xv.data() + r * n + begin, count, out.data() + r * count);
  return push("slice_cols", std::move(out), {x}, [x, m, n, begin, count](Graph& g, std::uint32_t self) {
    const Tensor& go = g.nodes_[self].grad;
    Tensor& gx = g.grad_buffer(x.id);
    for (std::size_t r = 0; r < m; ++r) {
      kernels::active().axpy(count, 1.0, go.data() + r * count, gx.data() + r * n + begin);
    }
  });
}

Var Graph::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t m = value(parts[0]).rows();
  std::size_t n = 0;
  bool ng = false;
  for (Var p : parts) {
    if (value(p).rows() != m) throw DimensionError("concat_cols: row counts differ");
    n += value(p).cols();
    ng = ng || needs(p);
  }
  Tensor out(m, n);
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& pv = value(p);
    for (std::size_t r = 0; r < m; ++r) std::copy_n(pv.data() + r * pv.cols(), pv.cols(), out.data() + r * n + off);
    off += pv.cols();
  }
  return push("concat_cols", std::move(out), ng,
              [ids = std::vector<Var>(parts.begin(), parts.end()), m, n](Graph& g, std::uint32_t self) {
                const Tensor& go = g.nodes_[self].grad;
                std::size_t off = 0;
                for (Var p : ids) {
                  const std::size_t w = g.nodes_[p.id].value.cols();
                  if (g.needs(p)) {
                    Tensor& gp = g.grad_buffer(p.id);
                    for (std::size_t r = 0; r < m; ++r) {
                      kernels::active().axpy(w, 1.0, go.data() + r * n + off, gp.data() + r * w);
                    }
                  }
                  off += w;
                }
              });
}

Var Graph::cross_entropy(Var logits, std::span<const int> targets) {
  const Tensor& lv = value(logits);
  const std::size_t m = lv.rows(), n = lv.cols();
  if (targets.size() != m) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         std::to_string(m) + " rows");
  }
  auto probs = std::make_shared<Tensor>(m, n);
  double loss = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= n) {
      throw IndexError("cross_entropy: target " + std::to_string(targets[r]) + " out of range");
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < n; ++c) mx = std::max(mx, lv(r, c));
    double total = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      (*probs)(r, c) = std::exp(lv(r, c) - mx);
      total += (*probs)(r, c);
    }
    for (std::size_t c = 0; c < n; ++c) (*probs)(r, c) /= total;
    loss -= lv(r, static_cast<std::size_t>(targets[r])) - mx - std::log(total);
  }
  return push("cross_entropy", Tensor::scalar(loss), {logits},
              [logits, m, n, probs, t = std::vector<int>(targets.begin(), targets.end())](
                  Graph& g, std::uint32_t self) {
                const double go = g.nodes_[self].grad[0];
                Tensor& gl = g.grad_buffer(logits.id);
                for (std::size_t r = 0; r < m; ++r) {
                  for (std::size_t c = 0; c < n; ++c) gl(r, c) += go * (*probs)(r, c);
                  gl(r, static_cast<std::size_t>(t[r])) -= go;
                }
              });
}

void Graph::backward(Var loss) {
  if (mode_ != GradMode::kRecord) throw std::logic_error("backward() on an inference graph");
  const Tensor& lv = value(loss);
  if (lv.size() != 1) throw DimensionError("backward: loss must be 1x1, got " + lv.shape_string());
  for (Node& n : nodes_) n.grad = Tensor();
  if (!nodes_[loss.id].needs_grad) return;
  grad_buffer(loss.id)[0] = 1.0;
  for (std::uint32_t id = loss.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param != nullptr) {
      kernels::active().axpy(n.grad.size(), 1.0, n.grad.data(), n.param->grad.data());
    }
  }
}

}  // namespace itst
