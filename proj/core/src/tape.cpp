#include "rislab/tape.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace rislab {
namespace {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMap = Eigen::Map<EMat>;
using ECMap = Eigen::Map<const EMat>;

ECMap map_of(const RealTensor& t) {
  return ECMap(t.data(), static_cast<Eigen::Index>(t.rows()),
               static_cast<Eigen::Index>(t.cols()));
}

EMap map_of(RealTensor& t) {
  return EMap(t.data(), static_cast<Eigen::Index>(t.rows()),
              static_cast<Eigen::Index>(t.cols()));
}

bool broadcastable(std::size_t a, std::size_t b) { return a == b || a == 1 || b == 1; }

[[noreturn]] void shape_error(const char* op, const RealTensor& a,
                              const RealTensor& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                              a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

Tape::NodeId Tape::push(RealTensor value, std::vector<NodeId> inputs,
                        std::function<void(Tape&, NodeId)> backprop) {
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.backprop = std::move(backprop);
  for (NodeId in : n.inputs) {
    if (nodes_[in].requires_grad) {
      n.requires_grad = true;
      break;
    }
  }
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

void Tape::check_node(NodeId id, const char* op) const {
  if (id >= nodes_.size()) {
    throw std::invalid_argument(std::string(op) + ": node id " +
                                std::to_string(id) + " out of range");
  }
}

Tape::NodeId Tape::input(RealTensor value) {
  if (check_finite_) value.check_finite("input leaf");
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

Tape::NodeId Tape::constant(RealTensor value) {
  if (check_finite_) value.check_finite("constant leaf");
  Node n;
  n.value = std::move(value);
  n.requires_grad = false;
  nodes_.push_back(std::move(n));
  return nodes_.size() - 1;
}

void Tape::accumulate(NodeId id, const RealTensor& delta) {
  if (!nodes_[id].requires_grad) return;
  RealTensor& g = grads_[id];
  if (g.empty()) {
    g = delta;
    return;
  }
  if (!g.same_shape(delta)) shape_error("accumulate", g, delta);
  for (std::size_t i = 0; i < g.numel(); ++i) g[i] += delta[i];
}

RealTensor Tape::reduce_to_shape(const RealTensor& g, NodeId id) const {
  const RealTensor& target = nodes_[id].value;
  if (g.same_shape(target)) return g;
  RealTensor out(target.rows(), target.cols(), 0.0);
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const std::size_t tr = target.rows() == 1 ? 0 : r;
    for (std::size_t c = 0; c < g.cols(); ++c) {
      const std::size_t tc = target.cols() == 1 ? 0 : c;
      out.at(tr, tc) += g.at(r, c);
    }
  }
  return out;
}

namespace {

// Shared forward/backward skeleton for broadcasting binary elementwise ops.
template <typename FwdFn>
RealTensor broadcast_forward(const RealTensor& a, const RealTensor& b,
                             const char* op, FwdFn fn) {
  if (!broadcastable(a.rows(), b.rows()) || !broadcastable(a.cols(), b.cols())) {
    shape_error(op, a, b);
  }
  const std::size_t rows = std::max(a.rows(), b.rows());
  const std::size_t cols = std::max(a.cols(), b.cols());
  RealTensor out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t ar = a.rows() == 1 ? 0 : r;
    const std::size_t br = b.rows() == 1 ? 0 : r;
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t ac = a.cols() == 1 ? 0 : c;
      const std::size_t bc = b.cols() == 1 ? 0 : c;
      out.at(r, c) = fn(a.at(ar, ac), b.at(br, bc));
    }
  }
  return out;
}

// Evaluates `fn(grad, a, b)` over the (broadcast) output grid, producing the
// full-size partial adjoint for one operand before shape reduction.
template <typename GradFn>
RealTensor broadcast_partial(const RealTensor& g, const RealTensor& a,
                             const RealTensor& b, GradFn fn) {
  RealTensor out(g.rows(), g.cols());
  for (std::size_t r = 0; r < g.rows(); ++r) {
    const std::size_t ar = a.rows() == 1 ? 0 : r;
    const std::size_t br = b.rows() == 1 ? 0 : r;
    for (std::size_t c = 0; c < g.cols(); ++c) {
      const std::size_t ac = a.cols() == 1 ? 0 : c;
      const std::size_t bc = b.cols() == 1 ? 0 : c;
      out.at(r, c) = fn(g.at(r, c), a.at(ar, ac), b.at(br, bc));
    }
  }
  return out;
}

}  // namespace

Tape::NodeId Tape::add(NodeId a, NodeId b) {
  check_node(a, "add");
  check_node(b, "add");
  RealTensor out = broadcast_forward(nodes_[a].value, nodes_[b].value, "add",
                                     [](double x, double y) { return x + y; });
  if (check_finite_) out.check_finite("add");
  return push(std::move(out), {a, b}, [a, b](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    t.accumulate(a, t.reduce_to_shape(g, a));
    t.accumulate(b, t.reduce_to_shape(g, b));
  });
}

Tape::NodeId Tape::sub(NodeId a, NodeId b) {
  check_node(a, "sub");
  check_node(b, "sub");
  RealTensor out = broadcast_forward(nodes_[a].value, nodes_[b].value, "sub",
                                     [](double x, double y) { return x - y; });
  if (check_finite_) out.check_finite("sub");
  return push(std::move(out), {a, b}, [a, b](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    t.accumulate(a, t.reduce_to_shape(g, a));
    RealTensor neg(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.numel(); ++i) neg[i] = -g[i];
    t.accumulate(b, t.reduce_to_shape(neg, b));
  });
}

Tape::NodeId Tape::mul(NodeId a, NodeId b) {
  check_node(a, "mul");
  check_node(b, "mul");
  RealTensor out = broadcast_forward(nodes_[a].value, nodes_[b].value, "mul",
                                     [](double x, double y) { return x * y; });
  if (check_finite_) out.check_finite("mul");
  return push(std::move(out), {a, b}, [a, b](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    const RealTensor& va = t.nodes_[a].value;
    const RealTensor& vb = t.nodes_[b].value;
    if (t.nodes_[a].requires_grad) {
      RealTensor da = broadcast_partial(
          g, va, vb, [](double gg, double, double y) { return gg * y; });
      t.accumulate(a, t.reduce_to_shape(da, a));
    }
    if (t.nodes_[b].requires_grad) {
      RealTensor db = broadcast_partial(
          g, va, vb, [](double gg, double x, double) { return gg * x; });
      t.accumulate(b, t.reduce_to_shape(db, b));
    }
  });
}

Tape::NodeId Tape::div(NodeId a, NodeId b) {
  check_node(a, "div");
  check_node(b, "div");
  RealTensor out = broadcast_forward(nodes_[a].value, nodes_[b].value, "div",
                                     [](double x, double y) { return x / y; });
  if (check_finite_) out.check_finite("div");
  return push(std::move(out), {a, b}, [a, b](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    const RealTensor& va = t.nodes_[a].value;
    const RealTensor& vb = t.nodes_[b].value;
    if (t.nodes_[a].requires_grad) {
      RealTensor da = broadcast_partial(
          g, va, vb, [](double gg, double, double y) { return gg / y; });
      t.accumulate(a, t.reduce_to_shape(da, a));
    }
    if (t.nodes_[b].requires_grad) {
      RealTensor db = broadcast_partial(g, va, vb, [](double gg, double x, double y) {
        return -gg * x / (y * y);
      });
      t.accumulate(b, t.reduce_to_shape(db, b));
    }
  });
}

Tape::NodeId Tape::matmul(NodeId a, NodeId b) {
  check_node(a, "matmul");
  check_node(b, "matmul");
  const RealTensor& va = nodes_[a].value;
  const RealTensor& vb = nodes_[b].value;
  if (va.cols() != vb.rows()) shape_error("matmul", va, vb);
  RealTensor out(va.rows(), vb.cols());
  map_of(out).noalias() = map_of(va) * map_of(vb);
  if (check_finite_) out.check_finite("matmul");
  return push(std::move(out), {a, b}, [a, b](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    const RealTensor& va = t.nodes_[a].value;
    const RealTensor& vb = t.nodes_[b].value;
    if (t.nodes_[a].requires_grad) {
      RealTensor da(va.rows(), va.cols());
      map_of(da).noalias() = map_of(g) * map_of(vb).transpose();
      t.accumulate(a, da);
    }
    if (t.nodes_[b].requires_grad) {
      RealTensor db(vb.rows(), vb.cols());
      map_of(db).noalias() = map_of(va).transpose() * map_of(g);
      t.accumulate(b, db);
    }
  });
}

Tape::NodeId Tape::transpose(NodeId a) {
  check_node(a, "transpose");
  const RealTensor& va = nodes_[a].value;
  RealTensor out(va.cols(), va.rows());
  map_of(out) = map_of(va).transpose();
  return push(std::move(out), {a}, [a](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    RealTensor da(g.cols(), g.rows());
    map_of(da) = map_of(g).transpose();
    t.accumulate(a, da);
  });
}

Tape::NodeId Tape::concat(const std::vector<NodeId>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: empty part list");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  for (NodeId p : parts) check_node(p, "concat");
  const RealTensor& first = nodes_[parts[0]].value;
  std::size_t rows = first.rows(), cols = first.cols();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const RealTensor& v = nodes_[parts[i]].value;
    if (axis == 0) {
      if (v.cols() != cols) shape_error("concat", first, v);
      rows += v.rows();
    } else {
      if (v.rows() != rows) shape_error("concat", first, v);
      cols += v.cols();
    }
  }
  if (axis == 0) cols = first.cols();
  else rows = first.rows();
  RealTensor out(rows, cols);
  std::size_t off = 0;
  for (NodeId p : parts) {
    const RealTensor& v = nodes_[p].value;
    if (axis == 0) {
      std::copy(v.data(), v.data() + v.numel(), out.data() + off * cols);
      off += v.rows();
    } else {
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy(v.data() + r * v.cols(), v.data() + (r + 1) * v.cols(),
                  out.data() + r * cols + off);
      }
      off += v.cols();
    }
  }
  std::vector<NodeId> ins = parts;
  return push(std::move(out), ins, [parts, axis](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    std::size_t off = 0;
    for (NodeId p : parts) {
      const RealTensor& v = t.nodes_[p].value;
      if (t.nodes_[p].requires_grad) {
        RealTensor dp(v.rows(), v.cols());
        if (axis == 0) {
          std::copy(g.data() + off * g.cols(), g.data() + (off + v.rows()) * g.cols(),
                    dp.data());
        } else {
          for (std::size_t r = 0; r < v.rows(); ++r) {
            std::copy(g.data() + r * g.cols() + off,
                      g.data() + r * g.cols() + off + v.cols(),
                      dp.data() + r * v.cols());
          }
        }
        t.accumulate(p, dp);
      }
      off += (axis == 0) ? v.rows() : v.cols();
    }
  });
}

Tape::NodeId Tape::slice(NodeId a, std::size_t r0, std::size_t r1, std::size_t c0,
                         std::size_t c1) {
  check_node(a, "slice");
  const RealTensor& va = nodes_[a].value;
  if (r1 > va.rows() || c1 > va.cols() || r0 >= r1 || c0 >= c1) {
    throw std::invalid_argument("slice: range [" + std::to_string(r0) + "," +
                                std::to_string(r1) + ")x[" + std::to_string(c0) +
                                "," + std::to_string(c1) + ") invalid for " +
                                va.shape_str());
  }
  RealTensor out(r1 - r0, c1 - c0);
  for (std::size_t r = r0; r < r1; ++r) {
    std::copy(va.data() + r * va.cols() + c0, va.data() + r * va.cols() + c1,
              out.data() + (r - r0) * out.cols());
  }
  return push(std::move(out), {a}, [a, r0, r1, c0, c1](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    const RealTensor& va = t.nodes_[a].value;
    RealTensor da(va.rows(), va.cols(), 0.0);
    for (std::size_t r = r0; r < r1; ++r) {
      for (std::size_t c = c0; c < c1; ++c) {
        da.at(r, c) = g.at(r - r0, c - c0);
      }
    }
    t.accumulate(a, da);
  });
}

Tape::NodeId Tape::leaky_relu(NodeId a, double slope) {
  check_node(a, "leaky_relu");
  const RealTensor& va = nodes_[a].value;
  RealTensor out(va.rows(), va.cols());
  for (std::size_t i = 0; i < va.numel(); ++i) {
    out[i] = va[i] > 0.0 ? va[i] : slope * va[i];
  }
  return push(std::move(out), {a}, [a, slope](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    const RealTensor& va = t.nodes_[a].value;
    RealTensor da(va.rows(), va.cols());
    for (std::size_t i = 0; i < va.numel(); ++i) {
      da[i] = va[i] > 0.0 ? g[i] : slope * g[i];
    }
    t.accumulate(a, da);
  });
}

Tape::NodeId Tape::softmax(NodeId a) {
  check_node(a, "softmax");
  const RealTensor& va = nodes_[a].value;
  if (va.cols() == 0) throw std::invalid_argument("softmax: empty axis");
  RealTensor out(va.rows(), va.cols());
  for (std::size_t r = 0; r < va.rows(); ++r) {
    double mx = va.at(r, 0);
    for (std::size_t c = 1; c < va.cols(); ++c) mx = std::max(mx, va.at(r, c));
    double sum = 0.0;
    for (std::size_t c = 0; c < va.cols(); ++c) {
      const double e = std::exp(va.at(r, c) - mx);
      out.at(r, c) = e;
      sum += e;
    }
    for (std::size_t c = 0; c < va.cols(); ++c) out.at(r, c) /= sum;
  }
  if (check_finite_) out.check_finite("softmax");
  return push(std::move(out), {a}, [a](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    const RealTensor& y = t.nodes_[self].value;
    RealTensor da(y.rows(), y.cols());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < y.cols(); ++c) dot += g.at(r, c) * y.at(r, c);
      for (std::size_t c = 0; c < y.cols(); ++c) {
        da.at(r, c) = y.at(r, c) * (g.at(r, c) - dot);
      }
    }
    t.accumulate(a, da);
  });
}

Tape::NodeId Tape::log(NodeId a) {
  check_node(a, "log");
  const RealTensor& va = nodes_[a].value;
  RealTensor out(va.rows(), va.cols());
  for (std::size_t i = 0; i < va.numel(); ++i) out[i] = std::log(va[i]);
  if (check_finite_) out.check_finite("log");
  return push(std::move(out), {a}, [a](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    const RealTensor& va = t.nodes_[a].value;
    RealTensor da(va.rows(), va.cols());
    for (std::size_t i = 0; i < va.numel(); ++i) da[i] = g[i] / va[i];
    t.accumulate(a, da);
  });
}

Tape::NodeId Tape::square(NodeId a) {
  check_node(a, "square");
  const RealTensor& va = nodes_[a].value;
  RealTensor out(va.rows(), va.cols());
  for (std::size_t i = 0; i < va.numel(); ++i) out[i] = va[i] * va[i];
  return push(std::move(out), {a}, [a](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    const RealTensor& va = t.nodes_[a].value;
    RealTensor da(va.rows(), va.cols());
    for (std::size_t i = 0; i < va.numel(); ++i) da[i] = 2.0 * va[i] * g[i];
    t.accumulate(a, da);
  });
}

Tape::NodeId Tape::sqrt(NodeId a) {
  check_node(a, "sqrt");
  const RealTensor& va = nodes_[a].value;
  RealTensor out(va.rows(), va.cols());
  for (std::size_t i = 0; i < va.numel(); ++i) out[i] = std::sqrt(va[i]);
  if (check_finite_) out.check_finite("sqrt");
  return push(std::move(out), {a}, [a](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    const RealTensor& y = t.nodes_[self].value;
    RealTensor da(y.rows(), y.cols());
    for (std::size_t i = 0; i < y.numel(); ++i) da[i] = 0.5 * g[i] / y[i];
    t.accumulate(a, da);
  });
}

Tape::NodeId Tape::sum_axis(NodeId a, int axis) {
  check_node(a, "sum_axis");
  if (axis != 0 && axis != 1) throw std::invalid_argument("sum_axis: axis must be 0 or 1");
  const RealTensor& va = nodes_[a].value;
  RealTensor out = axis == 0 ? RealTensor(1, va.cols(), 0.0)
                             : RealTensor(va.rows(), 1, 0.0);
  for (std::size_t r = 0; r < va.rows(); ++r) {
    for (std::size_t c = 0; c < va.cols(); ++c) {
      if (axis == 0) out.at(0, c) += va.at(r, c);
      else out.at(r, 0) += va.at(r, c);
    }
  }
  if (check_finite_) out.check_finite("sum_axis");
  return push(std::move(out), {a}, [a, axis](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    const RealTensor& va = t.nodes_[a].value;
    RealTensor da(va.rows(), va.cols());
    for (std::size_t r = 0; r < va.rows(); ++r) {
      for (std::size_t c = 0; c < va.cols(); ++c) {
        da.at(r, c) = axis == 0 ? g.at(0, c) : g.at(r, 0);
      }
    }
    t.accumulate(a, da);
  });
}

Tape::NodeId Tape::mean_axis(NodeId a, int axis) {
  check_node(a, "mean_axis");
  if (axis != 0 && axis != 1) throw std::invalid_argument("mean_axis: axis must be 0 or 1");
  const RealTensor& va = nodes_[a].value;
  const double inv = 1.0 / static_cast<double>(axis == 0 ? va.rows() : va.cols());
  RealTensor out = axis == 0 ? RealTensor(1, va.cols(), 0.0)
                             : RealTensor(va.rows(), 1, 0.0);
  for (std::size_t r = 0; r < va.rows(); ++r) {
    for (std::size_t c = 0; c < va.cols(); ++c) {
      if (axis == 0) out.at(0, c) += va.at(r, c);
      else out.at(r, 0) += va.at(r, c);
    }
  }
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= inv;
  if (check_finite_) out.check_finite("mean_axis");
  return push(std::move(out), {a}, [a, axis, inv](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    const RealTensor& va = t.nodes_[a].value;
    RealTensor da(va.rows(), va.cols());
    for (std::size_t r = 0; r < va.rows(); ++r) {
      for (std::size_t c = 0; c < va.cols(); ++c) {
        da.at(r, c) = inv * (axis == 0 ? g.at(0, c) : g.at(r, 0));
      }
    }
    t.accumulate(a, da);
  });
}

Tape::NodeId Tape::max_many(const std::vector<NodeId>& parts) {
  if (parts.empty()) throw std::invalid_argument("max_many: empty part list");
  for (NodeId p : parts) check_node(p, "max_many");
  const RealTensor& first = nodes_[parts[0]].value;
  for (NodeId p : parts) {
    if (!nodes_[p].value.same_shape(first)) shape_error("max_many", first, nodes_[p].value);
  }
  RealTensor out = first;
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const RealTensor& v = nodes_[parts[i]].value;
    for (std::size_t j = 0; j < out.numel(); ++j) out[j] = std::max(out[j], v[j]);
  }
  std::vector<NodeId> ins = parts;
  return push(std::move(out), ins, [parts](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    const RealTensor& y = t.nodes_[self].value;
    // Subgradient routed to the first operand attaining the max, elementwise.
    std::vector<RealTensor> deltas;
    deltas.reserve(parts.size());
    for (NodeId p : parts) {
      deltas.emplace_back(y.rows(), y.cols(), 0.0);
      (void)p;
    }
    for (std::size_t j = 0; j < y.numel(); ++j) {
      for (std::size_t i = 0; i < parts.size(); ++i) {
        if (t.nodes_[parts[i]].value[j] == y[j]) {
          deltas[i][j] = g[j];
          break;
        }
      }
    }
    for (std::size_t i = 0; i < parts.size(); ++i) t.accumulate(parts[i], deltas[i]);
  });
}

Tape::NodeId Tape::scale(NodeId a, double c) {
  check_node(a, "scale");
  const RealTensor& va = nodes_[a].value;
  RealTensor out(va.rows(), va.cols());
  for (std::size_t i = 0; i < va.numel(); ++i) out[i] = c * va[i];
  if (check_finite_) out.check_finite("scale");
  return push(std::move(out), {a}, [a, c](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    RealTensor da(g.rows(), g.cols());
    for (std::size_t i = 0; i < g.numel(); ++i) da[i] = c * g[i];
    t.accumulate(a, da);
  });
}

Tape::NodeId Tape::add_scalar(NodeId a, double c) {
  check_node(a, "add_scalar");
  const RealTensor& va = nodes_[a].value;
  RealTensor out(va.rows(), va.cols());
  for (std::size_t i = 0; i < va.numel(); ++i) out[i] = va[i] + c;
  if (check_finite_) out.check_finite("add_scalar");
  return push(std::move(out), {a}, [a](Tape& t, NodeId self) {
    t.accumulate(a, t.grads_[self]);
  });
}

Tape::NodeId Tape::linmap_rows(NodeId x,
                               std::shared_ptr<const std::vector<double>> kernels,
                               std::size_t in_dim, std::size_t out_dim) {
  check_node(x, "linmap_rows");
  const RealTensor& vx = nodes_[x].value;
  if (vx.cols() != in_dim) {
    throw std::invalid_argument("linmap_rows: input width " +
                                std::to_string(vx.cols()) + " != " +
                                std::to_string(in_dim));
  }
  if (!kernels || kernels->size() != vx.rows() * in_dim * out_dim) {
    throw std::invalid_argument("linmap_rows: kernel buffer size mismatch");
  }
  RealTensor out(vx.rows(), out_dim);
  for (std::size_t r = 0; r < vx.rows(); ++r) {
    ECMap K(kernels->data() + r * in_dim * out_dim,
            static_cast<Eigen::Index>(in_dim), static_cast<Eigen::Index>(out_dim));
    Eigen::Map<const Eigen::RowVectorXd> xr(vx.data() + r * in_dim,
                                            static_cast<Eigen::Index>(in_dim));
    Eigen::Map<Eigen::RowVectorXd> yr(out.data() + r * out_dim,
                                      static_cast<Eigen::Index>(out_dim));
    yr.noalias() = xr * K;
  }
  if (check_finite_) out.check_finite("linmap_rows");
  return push(std::move(out), {x},
              [x, kernels, in_dim, out_dim](Tape& t, NodeId self) {
                const RealTensor& g = t.grads_[self];
                RealTensor dx(g.rows(), in_dim);
                for (std::size_t r = 0; r < g.rows(); ++r) {
                  ECMap K(kernels->data() + r * in_dim * out_dim,
                          static_cast<Eigen::Index>(in_dim),
                          static_cast<Eigen::Index>(out_dim));
                  Eigen::Map<const Eigen::RowVectorXd> gr(
                      g.data() + r * out_dim, static_cast<Eigen::Index>(out_dim));
                  Eigen::Map<Eigen::RowVectorXd> dr(
                      dx.data() + r * in_dim, static_cast<Eigen::Index>(in_dim));
                  dr.noalias() = gr * K.transpose();
                }
                t.accumulate(x, dx);
              });
}

Tape::NodeId Tape::unit_modulus(NodeId a) {
  check_node(a, "unit_modulus");
  const RealTensor& va = nodes_[a].value;
  if (va.cols() % 2 != 0) {
    throw std::invalid_argument("unit_modulus: column count must be even, got " +
                                va.shape_str());
  }
  const std::size_t m = va.cols() / 2;
  constexpr double kDeadEps = 1e-12;
  RealTensor out(va.rows(), va.cols());
  for (std::size_t r = 0; r < va.rows(); ++r) {
    for (std::size_t c = 0; c < m; ++c) {
      const double re = va.at(r, c);
      const double im = va.at(r, c + m);
      const double mag = std::sqrt(re * re + im * im);
      if (mag <= kDeadEps) {
        out.at(r, c) = 1.0;
        out.at(r, c + m) = 0.0;
        ++dead_units_;
      } else {
        out.at(r, c) = re / mag;
        out.at(r, c + m) = im / mag;
      }
    }
  }
  return push(std::move(out), {a}, [a, m](Tape& t, NodeId self) {
    const RealTensor& g = t.grads_[self];
    const RealTensor& va = t.nodes_[a].value;
    RealTensor da(va.rows(), va.cols(), 0.0);
    for (std::size_t r = 0; r < va.rows(); ++r) {
      for (std::size_t c = 0; c < m; ++c) {
        const double re = va.at(r, c);
        const double im = va.at(r, c + m);
        const double mag = std::sqrt(re * re + im * im);
        if (mag <= 1e-12) continue;  // dead unit: constant output, zero grad
        const double gre = g.at(r, c);
        const double gim = g.at(r, c + m);
        const double inv3 = 1.0 / (mag * mag * mag);
        da.at(r, c) = (im * im * gre - re * im * gim) * inv3;
        da.at(r, c + m) = (re * re * gim - re * im * gre) * inv3;
      }
    }
    t.accumulate(a, da);
  });
}

void Tape::backward(NodeId loss) {
  check_node(loss, "backward");
  const RealTensor& lv = nodes_[loss].value;
  if (lv.rows() != 1 || lv.cols() != 1) {
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                lv.shape_str());
  }
  grads_.assign(nodes_.size(), RealTensor{});
  grads_[loss] = RealTensor::scalar(1.0);
  for (std::size_t i = loss + 1; i-- > 0;) {
    if (grads_[i].empty()) continue;
    const Node& n = nodes_[i];
    if (!n.backprop || !n.requires_grad) continue;
    n.backprop(*this, i);
    if (check_finite_) grads_[i].check_finite("gradient of node " + std::to_string(i));
  }
}

const RealTensor& Tape::grad(NodeId id) const {
  if (id < grads_.size() && !grads_[id].empty()) return grads_[id];
  return empty_;
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
  dead_units_ = 0;
}

Tape::NodeId mlp2(Tape& t, Tape::NodeId x, Tape::NodeId w1, Tape::NodeId b1,
                  Tape::NodeId w2, Tape::NodeId b2, double slope) {
  Tape::NodeId h = t.leaky_relu(t.add(t.matmul(x, w1), b1), slope);
  return t.leaky_relu(t.add(t.matmul(h, w2), b2), slope);
}

}  // namespace rislab
