#include "divens/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "divens/error.hpp"
#include "divens/linalg.hpp"

namespace divens::ng {

const Tensor& Var::value() const { return graph->value(*this); }

Var Graph::leaf(Tensor value, bool requires_grad) {
  Node node;
  node.op = "leaf";
  value.requires_grad = requires_grad;
  node.needs_grad = requires_grad;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Var Graph::record(std::string_view op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node node;
  node.op = op;
  node.needs_grad = std::any_of(inputs.begin(), inputs.end(), [&](std::size_t i) { return nodes_[i].needs_grad; });
  value.requires_grad = node.needs_grad;
  node.value = std::move(value);
  node.inputs = std::move(inputs);
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var{this, nodes_.size() - 1};
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape());
    node.has_grad = true;
  }
  return node.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph != this) fail(ErrorCode::kInvalidArgument, "backward: loss belongs to another graph");
  const Tensor& lv = nodes_[loss.id].value;
  if (lv.size() != 1) {
    fail(ErrorCode::kShapeMismatch, "backward: loss must be a scalar", "shape=" + shape_string(lv.shape()));
  }
  grad_buffer(loss.id)[0] += 1.0;
  for (std::size_t id = loss.id + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (!node.has_grad || !node.needs_grad || !node.backward) continue;
    node.backward(*this, id);
  }
}

void Graph::zero_grad() {
  for (Node& node : nodes_) {
    node.grad = Tensor();
    node.has_grad = false;
  }
}

bool Graph::has_grad(Var v) const { return nodes_[v.id].has_grad; }

const Tensor& Graph::grad(Var v) const {
  if (!nodes_[v.id].has_grad) {
    fail(ErrorCode::kInvalidArgument, "no gradient recorded for node", "id=" + std::to_string(v.id));
  }
  return nodes_[v.id].grad;
}

namespace {

using kernels::require_shape;

Graph& same_graph(Var a, Var b) {
  if (a.graph != b.graph || a.graph == nullptr) fail(ErrorCode::kInvalidArgument, "operands belong to different graphs");
  return *a.graph;
}

std::string pair_shapes(const Tensor& a, const Tensor& b) {
  return shape_string(a.shape()) + " vs " + shape_string(b.shape());
}

/// Runs `fn(grad_buffer(input))` only if the input takes part in gradients.
template <class Fn>
void accumulate(Graph& g, std::size_t input, Fn&& fn) {
  if (g.needs_grad(input)) fn(g.grad_buffer(input));
}

Var elementwise_unary(Var a, std::string_view op, Tensor value,
                      std::function<double(double x, double y)> local_derivative) {
  Graph& g = *a.graph;
  return g.record(op, std::move(value), {a.id}, [local_derivative](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    const Tensor& up = g.upstream(self);
    const Tensor& x = g.value(in);
    const Tensor& y = g.value(self);
    accumulate(g, in, [&](Tensor& dx) {
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += up[i] * local_derivative(x[i], y[i]);
    });
  });
}

void require_matrix(const Tensor& t, const char* op) { require_shape(t.rank() == 2, op, shape_string(t.shape())); }

}  // namespace

Var matmul(Var a, Var b) {
  Graph& g = same_graph(a, b);
  Tensor out = kernels::matmul(a.value(), b.value());
  return g.record("matmul", std::move(out), {a.id, b.id}, [](Graph& g, std::size_t self) {
    const std::size_t ia = g.inputs(self)[0], ib = g.inputs(self)[1];
    const Tensor& up = g.upstream(self);
    accumulate(g, ia, [&](Tensor& da) { kernels::matmul_bt_accumulate(up, g.value(ib), da); });
    accumulate(g, ib, [&](Tensor& db) { kernels::matmul_at_accumulate(g.value(ia), up, db); });
  });
}

Var transpose(Var a) {
  Graph& g = *a.graph;
  return g.record("transpose", kernels::transpose(a.value()), {a.id}, [](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    const Tensor back = kernels::transpose(g.upstream(self));
    accumulate(g, in, [&](Tensor& da) {
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += back[i];
    });
  });
}

namespace {

Var binary_same_shape(Var a, Var b, std::string_view op, int kind) {
  Graph& g = same_graph(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  require_shape(x.shape() == y.shape(), std::string(op).c_str(), pair_shapes(x, y));
  Tensor out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = kind == 0 ? x[i] + y[i] : kind == 1 ? x[i] - y[i] : x[i] * y[i];
  }
  return g.record(op, std::move(out), {a.id, b.id}, [kind](Graph& g, std::size_t self) {
    const std::size_t ia = g.inputs(self)[0], ib = g.inputs(self)[1];
    const Tensor& up = g.upstream(self);
    accumulate(g, ia, [&](Tensor& da) {
      const Tensor& other = g.value(ib);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += kind == 2 ? up[i] * other[i] : up[i];
    });
    accumulate(g, ib, [&](Tensor& db) {
      const Tensor& other = g.value(ia);
      for (std::size_t i = 0; i < db.size(); ++i) db[i] += kind == 0 ? up[i] : kind == 1 ? -up[i] : up[i] * other[i];
    });
  });
}

}  // namespace

Var add(Var a, Var b) { return binary_same_shape(a, b, "add", 0); }
Var sub(Var a, Var b) { return binary_same_shape(a, b, "sub", 1); }
Var mul(Var a, Var b) { return binary_same_shape(a, b, "mul", 2); }

Var scale(Var a, double factor) {
  return elementwise_unary(a, "scale", kernels::scale(a.value(), factor), [factor](double, double) { return factor; });
}

Var add_scalar(Var a, double value) {
  Tensor out = a.value();
  for (double& v : out.data()) v += value;
  return elementwise_unary(a, "add_scalar", std::move(out), [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var add_row(Var a, Var row) {
  Graph& g = same_graph(a, row);
  return g.record("add_row", kernels::add_row(a.value(), row.value()), {a.id, row.id}, [](Graph& g, std::size_t self) {
    const std::size_t ia = g.inputs(self)[0], ir = g.inputs(self)[1];
    const Tensor& up = g.upstream(self);
    accumulate(g, ia, [&](Tensor& da) {
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += up[i];
    });
    accumulate(g, ir, [&](Tensor& dr) {
      const std::size_t n = dr.size();
      for (std::size_t r = 0; r < up.rows(); ++r)
        for (std::size_t j = 0; j < n; ++j) dr[j] += up(r, j);
    });
  });
}

Var relu(Var a) {
  return elementwise_unary(a, "relu", kernels::relu(a.value()), [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::tanh(v);
  return elementwise_unary(a, "tanh", std::move(out), [](double, double y) { return 1.0 - y * y; });
}

Var exp(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = std::exp(v);
  return elementwise_unary(a, "exp", std::move(out), [](double, double y) { return y; });
}

Var log(Var a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(out[i] > 0.0)) {
      fail(ErrorCode::kNumeric, "log: argument must be positive", "index=" + std::to_string(i) + " value=" + std::to_string(out[i]));
    }
    out[i] = std::log(out[i]);
  }
  return elementwise_unary(a, "log", std::move(out), [](double x, double) { return 1.0 / x; });
}

Var sum(Var a) {
  Graph& g = *a.graph;
  double total = 0.0;
  for (double v : a.value().data()) total += v;
  return g.record("sum", Tensor::scalar(total), {a.id}, [](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    const double up = g.upstream(self)[0];
    accumulate(g, in, [&](Tensor& da) {
      for (double& v : da.data()) v += up;
    });
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  require_shape(n > 0, "mean", shape_string(a.shape()));
  return scale(sum(a), 1.0 / n);
}

Var sum_axis(Var a, std::size_t axis) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  require_matrix(x, "sum_axis");
  require_shape(axis < 2, "sum_axis", "axis=" + std::to_string(axis));
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Tensor out(Shape{axis == 0 ? n : m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += x(i, j);
  return g.record("sum_axis", std::move(out), {a.id}, [axis](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    const Tensor& up = g.upstream(self);
    accumulate(g, in, [&](Tensor& da) {
      const std::size_t m = da.shape()[0], n = da.shape()[1];
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) da(i, j) += up[axis == 0 ? j : i];
    });
  });
}

Var mean_axis(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  require_matrix(x, "mean_axis");
  require_shape(axis < 2, "mean_axis", "axis=" + std::to_string(axis));
  return scale(sum_axis(a, axis), 1.0 / static_cast<double>(x.shape()[axis]));
}

Var softmax(Var a) {
  Graph& g = *a.graph;
  return g.record("softmax", kernels::softmax(a.value()), {a.id}, [](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    const Tensor& up = g.upstream(self);
    const Tensor& y = g.value(self);
    accumulate(g, in, [&](Tensor& da) {
      for (std::size_t r = 0; r < y.rows(); ++r) {
        auto yr = y.row(r);
        auto ur = up.row(r);
        double dot = 0.0;
        for (std::size_t j = 0; j < yr.size(); ++j) dot += ur[j] * yr[j];
        auto dr = da.row(r);
        for (std::size_t j = 0; j < yr.size(); ++j) dr[j] += yr[j] * (ur[j] - dot);
      }
    });
  });
}

Var log_softmax(Var a) {
  Graph& g = *a.graph;
  return g.record("log_softmax", kernels::log_softmax(a.value()), {a.id}, [](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    const Tensor& up = g.upstream(self);
    const Tensor& y = g.value(self);
    accumulate(g, in, [&](Tensor& da) {
      for (std::size_t r = 0; r < y.rows(); ++r) {
        auto yr = y.row(r);
        auto ur = up.row(r);
        double total = 0.0;
        for (double u : ur) total += u;
        auto dr = da.row(r);
        for (std::size_t j = 0; j < yr.size(); ++j) dr[j] += ur[j] - std::exp(yr[j]) * total;
      }
    });
  });
}

Var logsumexp(Var a) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  require_shape(x.rank() == 1 || x.rank() == 2, "logsumexp", shape_string(x.shape()));
  Tensor out = x.rank() == 2 ? Tensor(Shape{x.rows()}) : Tensor::scalar(0.0);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double v : row) total += std::exp(v - mx);
    out[r] = mx + std::log(total);
  }
  return g.record("logsumexp", std::move(out), {a.id}, [](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    const Tensor& up = g.upstream(self);
    const Tensor& x = g.value(in);
    const Tensor& y = g.value(self);
    accumulate(g, in, [&](Tensor& da) {
      for (std::size_t r = 0; r < x.rows(); ++r) {
        auto xr = x.row(r);
        auto dr = da.row(r);
        for (std::size_t j = 0; j < xr.size(); ++j) dr[j] += up[r] * std::exp(xr[j] - y[r]);
      }
    });
  });
}

Var l2norm_axis(Var a, std::size_t axis) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  require_matrix(x, "l2norm_axis");
  require_shape(axis < 2, "l2norm_axis", "axis=" + std::to_string(axis));
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Tensor out(Shape{axis == 0 ? n : m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[axis == 0 ? j : i] += x(i, j) * x(i, j);
  for (double& v : out.data()) v = std::sqrt(v);
  return g.record("l2norm_axis", std::move(out), {a.id}, [axis](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    const Tensor& up = g.upstream(self);
    const Tensor& x = g.value(in);
    const Tensor& norms = g.value(self);
    accumulate(g, in, [&](Tensor& da) {
      const std::size_t m = x.shape()[0], n = x.shape()[1];
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t k = axis == 0 ? j : i;
          if (norms[k] > 0.0) da(i, j) += up[k] * x(i, j) / norms[k];
        }
      }
    });
  });
}

Var l2_normalize_rows(Var a, double tiny) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  require_matrix(x, "l2_normalize_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  Tensor out(x.shape());
  auto norms = std::make_shared<std::vector<double>>(m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (double v : x.row(i)) sq += v * v;
    const double norm = std::sqrt(sq);
    (*norms)[i] = norm;
    auto orow = out.row(i);
    if (norm < tiny) {
      const double u = 1.0 / std::sqrt(static_cast<double>(n));
      std::fill(orow.begin(), orow.end(), u);
    } else {
      for (std::size_t j = 0; j < n; ++j) orow[j] = x(i, j) / norm;
    }
  }
  return g.record("l2_normalize_rows", std::move(out), {a.id}, [norms, tiny](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    const Tensor& up = g.upstream(self);
    const Tensor& y = g.value(self);
    accumulate(g, in, [&](Tensor& da) {
      for (std::size_t i = 0; i < y.rows(); ++i) {
        const double norm = (*norms)[i];
        if (norm < tiny) continue;
        auto yr = y.row(i);
        auto ur = up.row(i);
        double dot = 0.0;
        for (std::size_t j = 0; j < yr.size(); ++j) dot += yr[j] * ur[j];
        auto dr = da.row(i);
        for (std::size_t j = 0; j < yr.size(); ++j) dr[j] += (ur[j] - yr[j] * dot) / norm;
      }
    });
  });
}

Var reshape(Var a, Shape shape) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  require_shape(shape_size(shape) == x.size(), "reshape", shape_string(x.shape()) + " -> " + shape_string(shape));
  return g.record("reshape", Tensor(std::move(shape), x.storage()), {a.id}, [](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    const Tensor& up = g.upstream(self);
    accumulate(g, in, [&](Tensor& da) {
      for (std::size_t i = 0; i < da.size(); ++i) da[i] += up[i];
    });
  });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  require_shape(!parts.empty(), "concat", "no inputs");
  Graph& g = *parts[0].graph;
  const Tensor& first = parts[0].value();
  const std::size_t rank = first.rank();
  require_shape((rank == 2 && axis < 2) || (rank == 1 && axis == 0), "concat",
                "rank=" + std::to_string(rank) + " axis=" + std::to_string(axis));
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const Var& p : parts) {
    same_graph(parts[0], p);
    const Tensor& t = p.value();
    bool ok = t.rank() == rank;
    if (ok && rank == 2) ok = axis == 0 ? t.shape()[1] == first.shape()[1] : t.shape()[0] == first.shape()[0];
    require_shape(ok, "concat", pair_shapes(first, t));
    ids.push_back(p.id);
    widths.push_back(t.shape()[axis]);
    total += t.shape()[axis];
  }
  Shape shape = first.shape();
  shape[axis] = total;
  Tensor out(shape);
  // Along axis 0 (or for vectors) the parts are contiguous blocks; along
  // axis 1 each row interleaves the parts' rows.
  auto scatter = [&](auto&& visit) {
    std::size_t offset = 0;
    for (std::size_t p = 0; p < ids.size(); ++p) {
      visit(p, offset);
      offset += widths[p];
    }
  };
  scatter([&](std::size_t p, std::size_t offset) {
    const Tensor& t = g.value(ids[p]);
    if (rank == 1 || axis == 0) {
      std::copy(t.data().begin(), t.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset * (rank == 2 ? t.shape()[1] : 1)));
    } else {
      for (std::size_t r = 0; r < t.shape()[0]; ++r)
        for (std::size_t j = 0; j < widths[p]; ++j) out(r, offset + j) = t(r, j);
    }
  });
  return g.record("concat", std::move(out), ids, [axis, rank, widths](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    std::size_t offset = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      const std::size_t in = g.inputs(self)[p];
      accumulate(g, in, [&](Tensor& da) {
        if (rank == 1 || axis == 0) {
          const std::size_t base = offset * (rank == 2 ? da.shape()[1] : 1);
          for (std::size_t i = 0; i < da.size(); ++i) da[i] += up[base + i];
        } else {
          for (std::size_t r = 0; r < da.shape()[0]; ++r)
            for (std::size_t j = 0; j < widths[p]; ++j) da(r, j) += up(r, offset + j);
        }
      });
      offset += widths[p];
    }
  });
}

Var slice_cols(Var a, std::size_t start, std::size_t count) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  require_shape((x.rank() == 1 || x.rank() == 2) && start + count <= x.cols(), "slice_cols",
                shape_string(x.shape()) + " start=" + std::to_string(start) + " count=" + std::to_string(count));
  Shape shape = x.shape();
  shape.back() = count;
  Tensor out(shape);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t j = 0; j < count; ++j) out[r * count + j] = x.row(r)[start + j];
  return g.record("slice_cols", std::move(out), {a.id}, [start, count](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    const Tensor& up = g.upstream(self);
    accumulate(g, in, [&](Tensor& da) {
      for (std::size_t r = 0; r < da.rows(); ++r)
        for (std::size_t j = 0; j < count; ++j) da.row(r)[start + j] += up[r * count + j];
    });
  });
}

Var remove_index_rows(Var a, std::span<const std::size_t> index) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  require_matrix(x, "remove_index_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  require_shape(index.size() == m && n >= 2, "remove_index_rows",
                shape_string(x.shape()) + " index_count=" + std::to_string(index.size()));
  for (std::size_t k : index) require_shape(k < n, "remove_index_rows", "index " + std::to_string(k) + " out of range");
  Tensor out(Shape{m, n - 1});
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t c = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (j != index[i]) out(i, c++) = x(i, j);
  }
  std::vector<std::size_t> removed(index.begin(), index.end());
  return g.record("remove_index_rows", std::move(out), {a.id}, [removed](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    const Tensor& up = g.upstream(self);
    accumulate(g, in, [&](Tensor& da) {
      const std::size_t n = da.shape()[1];
      for (std::size_t i = 0; i < removed.size(); ++i) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < n; ++j)
          if (j != removed[i]) da(i, j) += up(i, c++);
      }
    });
  });
}

Var pick_rows(Var a, std::span<const std::size_t> index) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  require_matrix(x, "pick_rows");
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  require_shape(index.size() == m, "pick_rows", shape_string(x.shape()) + " index_count=" + std::to_string(index.size()));
  Tensor out(Shape{m});
  for (std::size_t i = 0; i < m; ++i) {
    require_shape(index[i] < n, "pick_rows", "index " + std::to_string(index[i]) + " out of range");
    out[i] = x(i, index[i]);
  }
  std::vector<std::size_t> picked(index.begin(), index.end());
  return g.record("pick_rows", std::move(out), {a.id}, [picked](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    const Tensor& up = g.upstream(self);
    accumulate(g, in, [&](Tensor& da) {
      for (std::size_t i = 0; i < picked.size(); ++i) da(i, picked[i]) += up[i];
    });
  });
}

Var entropy(Var probs) {
  Graph& g = *probs.graph;
  const Tensor& p = probs.value();
  require_shape(p.rank() == 1 || p.rank() == 2, "entropy", shape_string(p.shape()));
  Tensor out = p.rank() == 2 ? Tensor(Shape{p.rows()}) : Tensor::scalar(0.0);
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double h = 0.0;
    for (double v : p.row(r)) {
      if (v < 0.0) fail(ErrorCode::kNumeric, "entropy: negative probability", "value=" + std::to_string(v));
      if (v > 0.0) h -= v * std::log(v);
    }
    out[r] = h;
  }
  return g.record("entropy", std::move(out), {probs.id}, [](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    const Tensor& up = g.upstream(self);
    const Tensor& p = g.value(in);
    // d(-p log p)/dp = -(log p + 1); diverges at p = 0, floored there.
    constexpr double kFloor = 1e-300;
    accumulate(g, in, [&](Tensor& da) {
      for (std::size_t r = 0; r < p.rows(); ++r) {
        auto pr = p.row(r);
        auto dr = da.row(r);
        for (std::size_t j = 0; j < pr.size(); ++j) dr[j] -= up[r] * (std::log(std::max(pr[j], kFloor)) + 1.0);
      }
    });
  });
}

namespace {

void require_square(const Tensor& t, const char* op) {
  require_shape(t.rank() == 2 && t.shape()[0] == t.shape()[1], op, "non-square input " + shape_string(t.shape()));
}

/// Inverse with a structured error carrying the condition estimate.
Tensor checked_inverse(const Tensor& a, const char* op) {
  const linalg::Lu lu = linalg::lu_factor(a);
  const double cond = linalg::condition_1norm(a, lu);
  if (!std::isfinite(cond) || cond > 1e15) {
    fail(ErrorCode::kNumeric, std::string(op) + ": matrix is singular to working precision",
         "condition=" + std::to_string(cond));
  }
  return lu.inverse();
}

void add_scaled_transpose(Tensor& da, const Tensor& m, double factor) {
  const std::size_t n = m.shape()[0];
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) da(i, j) += factor * m(j, i);
}

}  // namespace

Var det(Var square) {
  Graph& g = *square.graph;
  require_square(square.value(), "det");
  const double d = linalg::determinant(square.value());
  return g.record("det", Tensor::scalar(d), {square.id}, [](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    accumulate(g, in, [&](Tensor& da) {
      const double up = g.upstream(self)[0];
      const double d = g.value(self)[0];
      add_scaled_transpose(da, checked_inverse(g.value(in), "det backward"), up * d);
    });
  });
}

Var inverse(Var square) {
  Graph& g = *square.graph;
  require_square(square.value(), "inverse");
  return g.record("inverse", checked_inverse(square.value(), "inverse"), {square.id}, [](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    accumulate(g, in, [&](Tensor& da) {
      // dA = -Y^T dY Y^T
      const Tensor yt = kernels::transpose(g.value(self));
      const Tensor t = kernels::matmul(kernels::matmul(yt, g.upstream(self)), yt);
      for (std::size_t i = 0; i < da.size(); ++i) da[i] -= t[i];
    });
  });
}

Var logdet(Var square) {
  Graph& g = *square.graph;
  const Tensor& a = square.value();
  require_square(a, "logdet");
  const linalg::Lu lu = linalg::lu_factor(a);
  const double d = lu.determinant();
  if (!(d > 0.0)) {
    fail(ErrorCode::kNumeric, "logdet: determinant must be positive",
         "det=" + std::to_string(d) + " condition=" + std::to_string(linalg::condition_1norm(a, lu)));
  }
  return g.record("logdet", Tensor::scalar(lu.log_abs_determinant()), {square.id}, [](Graph& g, std::size_t self) {
    const std::size_t in = g.inputs(self)[0];
    accumulate(g, in, [&](Tensor& da) {
      add_scaled_transpose(da, checked_inverse(g.value(in), "logdet backward"), g.upstream(self)[0]);
    });
  });
}

Var gram_logdet(std::span<const Var> members, double offset) {
  require_shape(!members.empty(), "gram_logdet", "no members");
  Graph& g = *members[0].graph;
  const std::size_t k = members.size();
  const Tensor& first = members[0].value();
  require_matrix(first, "gram_logdet");
  const std::size_t batch = first.shape()[0], width = first.shape()[1];
  std::vector<std::size_t> ids;
  for (const Var& v : members) {
    same_graph(members[0], v);
    require_shape(v.value().shape() == first.shape(), "gram_logdet", pair_shapes(first, v.value()));
    ids.push_back(v.id);
  }
  auto inverses = std::make_shared<std::vector<Tensor>>();
  inverses->reserve(batch);
  Tensor out(Shape{batch});
  Tensor gram(Shape{k, k});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < k; ++i) {
      auto ri = g.value(ids[i]).row(b);
      for (std::size_t j = i; j < k; ++j) {
        auto rj = g.value(ids[j]).row(b);
        double dot = 0.0;
        for (std::size_t c = 0; c < width; ++c) dot += ri[c] * rj[c];
        gram(i, j) = dot;
        gram(j, i) = dot;
      }
      gram(i, i) += offset;
    }
    const linalg::Lu lu = linalg::lu_factor(gram);
    const double d = lu.determinant();
    const double cond = linalg::condition_1norm(gram, lu);
    if (!(d > 0.0) || (offset == 0.0 && !(cond <= 1e15))) {
      fail(ErrorCode::kNumeric, "gram_logdet: Gram matrix is singular; use a positive offset",
           "row=" + std::to_string(b) + " condition=" + std::to_string(cond));
    }
    out[b] = lu.log_abs_determinant();
    inverses->push_back(lu.inverse());
  }
  return g.record("gram_logdet", std::move(out), ids, [inverses, k](Graph& g, std::size_t self) {
    const Tensor& up = g.upstream(self);
    const auto& in = g.inputs(self);
    for (std::size_t i = 0; i < k; ++i) {
      accumulate(g, in[i], [&](Tensor& da) {
        for (std::size_t b = 0; b < da.shape()[0]; ++b) {
          auto dr = da.row(b);
          const Tensor& inv = (*inverses)[b];
          for (std::size_t j = 0; j < k; ++j) {
            const double w = 2.0 * up[b] * inv(i, j);
            if (w == 0.0) continue;
            auto rj = g.value(in[j]).row(b);
            for (std::size_t c = 0; c < dr.size(); ++c) dr[c] += w * rj[c];
          }
        }
      });
    }
  });
}

double finite_diff_check(const std::function<Var(Graph&, Var)>& f, const Tensor& point, double h) {
  require(h > 0.0, "finite_diff_check: step must be positive");
  Tensor analytic;
  {
    Graph g;
    Var x = g.leaf(point, true);
    Var loss = f(g, x);
    g.backward(loss);
    analytic = g.has_grad(x) ? g.grad(x) : Tensor(point.shape());
  }
  auto evaluate = [&](const Tensor& at) {
    Graph g;
    return f(g, g.constant(at)).value().item();
  };
  double worst = 0.0;
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + h;
    const double up = evaluate(probe);
    probe[i] = point[i] - h;
    const double down = evaluate(probe);
    probe[i] = point[i];
    const double numeric = (up - down) / (2.0 * h);
    worst = std::max(worst, std::abs(analytic[i] - numeric) / (std::abs(numeric) + 1e-8));
  }
  return worst;
}

}  // namespace divens::ng
