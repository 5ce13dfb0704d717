#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "weakloc/tensor.hpp"

namespace weakloc {

class Tape;

// Handle to a node on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
};

// Records the forward computation; replaying it backward accumulates
// gradients into every node marked as requiring them. Nodes are immutable
// after recording except for their grad buffers.
class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;         // empty until touched by backward
    std::function<void(Tape&)> pull;  // sends this node's grad to its parents
    bool requires_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor t) { return push(std::move(t.shape), std::move(t.data), false); }
  Var constant(Shape s, std::vector<double> d) { return push(std::move(s), std::move(d), false); }
  Var scalar(double v) { return push(Shape{1}, {v}, false); }
  Var input(Tensor t, bool requires_grad = true) {
    return push(std::move(t.shape), std::move(t.data), requires_grad);
  }

  // Id the next created node will get; pull closures capture it to reach
  // their own grad buffer.
  int next_id() const { return int(nodes_.size()); }

  // Node constructor for ops: out requires grad iff any parent does, and the
  // pull closure is kept only in that case.
  Var make(Shape s, std::vector<double> v, const std::vector<Var>& parents,
           std::function<void(Tape&)> pull) {
    bool rg = false;
    for (const Var& p : parents) {
      assert(p.tape == this && p.id >= 0);
      rg = rg || nodes_[p.id].requires_grad;
    }
    Var out = push(std::move(s), std::move(v), rg);
    if (rg) nodes_[out.id].pull = std::move(pull);
    return out;
  }

  const Shape& shape(int id) const { return nodes_[id].shape; }
  const Shape& shape(Var v) const { return nodes_[v.id].shape; }
  const std::vector<double>& value(int id) const { return nodes_[id].value; }
  const std::vector<double>& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  // Grad buffer, allocated as zeros on first use.
  std::vector<double>& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
    return n.grad;
  }
  std::vector<double>& grad(Var v) { return grad(v.id); }
  bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }

  Tensor value_tensor(Var v) const { return Tensor(nodes_[v.id].shape, nodes_[v.id].value); }
  Tensor grad_tensor(Var v) const {
    const Node& n = nodes_[v.id];
    if (n.grad.empty()) return Tensor(n.shape);
    return Tensor(n.shape, n.grad);
  }

  // Reverse pass from a scalar root. All gradients are reset first, so two
  // backward calls over the same tape give bit-identical results.
  void backward(Var root) {
    assert(root.tape == this);
    if (nodes_[root.id].value.size() != 1)
      throw shape_error("backward: root must be scalar, got " + shape_str(nodes_[root.id].shape));
    for (Node& n : nodes_) n.grad.clear();
    grad(root.id)[0] = 1.0;
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (!n.grad.empty() && n.pull) n.pull(*this);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  Var push(Shape s, std::vector<double> v, bool rg) {
    if (shape_numel(s) != v.size()) throw shape_error("tape: shape/value size mismatch");
    nodes_.push_back(Node{std::move(s), std::move(v), {}, nullptr, rg});
    return Var{this, int(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
};

namespace detail {

inline bool is_prefix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  for (std::size_t i = 0; i < small.size(); ++i)
    if (small[i] != big[i]) return false;
  return true;
}

// Shapes combine when equal, when one side is a scalar, or when the smaller
// shape is a leading prefix of the bigger one (each entry of the smaller
// operand then repeats over its trailing block).
struct BinPlan {
  Shape out_shape;
  std::size_t n = 0;
  std::size_t div_a = 1;  // out index i reads a[i / div_a]
  std::size_t div_b = 1;
};

inline BinPlan bin_plan(const char* op, const Shape& a, const Shape& b) {
  const std::size_t na = shape_numel(a), nb = shape_numel(b);
  BinPlan p;
  if (a == b || nb == 1) {
    p.out_shape = a;
  } else if (na == 1) {
    p.out_shape = b;
  } else if (is_prefix(b, a)) {
    p.out_shape = a;
  } else if (is_prefix(a, b)) {
    p.out_shape = b;
  } else {
    throw shape_error(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                      " are not broadcastable");
  }
  p.n = shape_numel(p.out_shape);
  p.div_a = p.n / na;
  p.div_b = p.n / nb;
  return p;
}

}  // namespace detail

inline Var add(Var a, Var b) {
  Tape& t = *a.tape;
  const auto p = detail::bin_plan("add", t.shape(a), t.shape(b));
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  std::vector<double> out(p.n);
  for (std::size_t i = 0; i < p.n; ++i) out[i] = av[i / p.div_a] + bv[i / p.div_b];
  const int ia = a.id, ib = b.id, io = t.next_id();
  return t.make(p.out_shape, std::move(out), {a, b}, [ia, ib, io, p](Tape& t) {
    const auto& g = t.grad(io);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad(ia);
      for (std::size_t i = 0; i < p.n; ++i) ga[i / p.div_a] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t i = 0; i < p.n; ++i) gb[i / p.div_b] += g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  const auto p = detail::bin_plan("mul", t.shape(a), t.shape(b));
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  std::vector<double> out(p.n);
  for (std::size_t i = 0; i < p.n; ++i) out[i] = av[i / p.div_a] * bv[i / p.div_b];
  const int ia = a.id, ib = b.id, io = t.next_id();
  return t.make(p.out_shape, std::move(out), {a, b}, [ia, ib, io, p](Tape& t) {
    const auto& g = t.grad(io);
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad(ia);
      for (std::size_t i = 0; i < p.n; ++i) ga[i / p.div_a] += g[i] * bv[i / p.div_b];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t i = 0; i < p.n; ++i) gb[i / p.div_b] += g[i] * av[i / p.div_a];
    }
  });
}

inline Var sub(Var a, Var b) {
  Tape& t = *a.tape;
  const auto p = detail::bin_plan("sub", t.shape(a), t.shape(b));
  const auto& av = t.value(a);
  const auto& bv = t.value(b);
  std::vector<double> out(p.n);
  for (std::size_t i = 0; i < p.n; ++i) out[i] = av[i / p.div_a] - bv[i / p.div_b];
  const int ia = a.id, ib = b.id, io = t.next_id();
  return t.make(p.out_shape, std::move(out), {a, b}, [ia, ib, io, p](Tape& t) {
    const auto& g = t.grad(io);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad(ia);
      for (std::size_t i = 0; i < p.n; ++i) ga[i / p.div_a] += g[i];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad(ib);
      for (std::size_t i = 0; i < p.n; ++i) gb[i / p.div_b] -= g[i];
    }
  });
}

inline Var scale(Var a, double c) {
  Tape& t = *a.tape;
  const auto& av = t.value(a);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = c * av[i];
  const int ia = a.id, io = t.next_id();
  return t.make(t.shape(a), std::move(out), {a}, [ia, io, c](Tape& t) {
    const auto& g = t.grad(io);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
  });
}

inline Var neg(Var a) { return scale(a, -1.0); }

inline Var add_scalar(Var a, double c) {
  Tape& t = *a.tape;
  const auto& av = t.value(a);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + c;
  const int ia = a.id, io = t.next_id();
  return t.make(t.shape(a), std::move(out), {a}, [ia, io](Tape& t) {
    const auto& g = t.grad(io);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

inline Var vsum(Var a) {
  Tape& t = *a.tape;
  const auto& av = t.value(a);
  double s = 0.0;
  for (double v : av) s += v;
  const int ia = a.id, io = t.next_id();
  return t.make(Shape{1}, {s}, {a}, [ia, io](Tape& t) {
    const double g = t.grad(io)[0];
    auto& ga = t.grad(ia);
    for (double& v : ga) v += g;
  });
}

inline Var vmean(Var a) { return scale(vsum(a), 1.0 / double(a.tape->value(a).size())); }

// Sum over all trailing axes, keeping the first `keep` dimensions.
inline Var sum_trailing(Var a, int keep) {
  Tape& t = *a.tape;
  const Shape& as = t.shape(a);
  if (keep < 0 || std::size_t(keep) > as.size())
    throw shape_error("sum_trailing: keep out of range for " + shape_str(as));
  Shape os(as.begin(), as.begin() + keep);
  if (os.empty()) os = {1};
  const std::size_t on = shape_numel(os);
  const auto& av = t.value(a);
  const std::size_t block = av.size() / on;
  std::vector<double> out(on, 0.0);
  for (std::size_t j = 0; j < on; ++j) {
    double s = 0.0;
    for (std::size_t r = 0; r < block; ++r) s += av[j * block + r];
    out[j] = s;
  }
  const int ia = a.id, io = t.next_id();
  return t.make(std::move(os), std::move(out), {a}, [ia, io, on, block](Tape& t) {
    const auto& g = t.grad(io);
    auto& ga = t.grad(ia);
    for (std::size_t j = 0; j < on; ++j)
      for (std::size_t r = 0; r < block; ++r) ga[j * block + r] += g[j];
  });
}

// Kink at 0 takes the left subgradient (the slope branch).
inline Var leaky_relu(Var a, double slope) {
  Tape& t = *a.tape;
  const auto& av = t.value(a);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] >= 0.0 ? av[i] : slope * av[i];
  const int ia = a.id, io = t.next_id();
  return t.make(t.shape(a), std::move(out), {a}, [ia, io, slope](Tape& t) {
    const auto& g = t.grad(io);
    const auto& av = t.value(ia);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (av[i] > 0.0 ? 1.0 : slope);
  });
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// log(sigmoid(x)) without overflow or log(0) for large |x|.
inline double log_sigmoid(double x) {
  const double t = -x;
  return -(std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t))));
}

inline Var logistic(Var a) {
  Tape& t = *a.tape;
  const auto& av = t.value(a);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = sigmoid(av[i]);
  const int ia = a.id, io = t.next_id();
  return t.make(t.shape(a), std::move(out), {a}, [ia, io](Tape& t) {
    const auto& g = t.grad(io);
    const auto& y = t.value(io);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

inline Var log_logistic(Var a) {
  Tape& t = *a.tape;
  const auto& av = t.value(a);
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = log_sigmoid(av[i]);
  const int ia = a.id, io = t.next_id();
  return t.make(t.shape(a), std::move(out), {a}, [ia, io](Tape& t) {
    const auto& g = t.grad(io);
    const auto& y = t.value(io);  // y = log sigmoid(x), so sigmoid(x) = exp(y)
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (1.0 - std::exp(y[i]));
  });
}

inline Var reshape(Var a, Shape s) {
  Tape& t = *a.tape;
  if (shape_numel(s) != t.value(a).size())
    throw shape_error("reshape: " + shape_str(t.shape(a)) + " to " + shape_str(s));
  const int ia = a.id, io = t.next_id();
  return t.make(std::move(s), t.value(a), {a}, [ia, io](Tape& t) {
    const auto& g = t.grad(io);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

inline Var flatten(Var a) { return reshape(a, {int(a.tape->value(a).size())}); }

// Single element as a 1-vector.
inline Var take(Var a, int index) {
  Tape& t = *a.tape;
  const auto& av = t.value(a);
  if (index < 0 || std::size_t(index) >= av.size())
    throw shape_error("take: index out of range");
  const int ia = a.id, io = t.next_id();
  return t.make(Shape{1}, {av[index]}, {a}, [ia, io, index](Tape& t) {
    t.grad(ia)[index] += t.grad(io)[0];
  });
}

// Column k of a [N,C] matrix.
inline Var gather_col(Var m, int k) {
  Tape& t = *m.tape;
  const Shape& s = t.shape(m);
  if (s.size() != 2) throw shape_error("gather_col: expected matrix, got " + shape_str(s));
  const int n = s[0], c = s[1];
  if (k < 0 || k >= c) throw shape_error("gather_col: column out of range");
  const auto& mv = t.value(m);
  std::vector<double> out(n);
  for (int i = 0; i < n; ++i) out[i] = mv[std::size_t(i) * c + k];
  const int im = m.id, io = t.next_id();
  return t.make(Shape{n}, std::move(out), {m}, [im, io, n, c, k](Tape& t) {
    const auto& g = t.grad(io);
    auto& gm = t.grad(im);
    for (int i = 0; i < n; ++i) gm[std::size_t(i) * c + k] += g[i];
  });
}

// Columns [j0, j0+w) of a [N,C] matrix.
inline Var gather_cols(Var m, int j0, int w) {
  Tape& t = *m.tape;
  const Shape& s = t.shape(m);
  if (s.size() != 2) throw shape_error("gather_cols: expected matrix, got " + shape_str(s));
  const int n = s[0], c = s[1];
  if (j0 < 0 || w < 1 || j0 + w > c) throw shape_error("gather_cols: column range out of range");
  const auto& mv = t.value(m);
  std::vector<double> out(std::size_t(n) * w);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < w; ++j) out[std::size_t(i) * w + j] = mv[std::size_t(i) * c + j0 + j];
  const int im = m.id, io = t.next_id();
  return t.make(Shape{n, w}, std::move(out), {m}, [im, io, n, c, j0, w](Tape& t) {
    const auto& g = t.grad(io);
    auto& gm = t.grad(im);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < w; ++j) gm[std::size_t(i) * c + j0 + j] += g[std::size_t(i) * w + j];
  });
}

// 1-D concatenation.
inline Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw shape_error("concat: no inputs");
  Tape& t = *parts[0].tape;
  std::vector<double> out;
  std::vector<int> ids, offs;
  for (const Var& p : parts) {
    ids.push_back(p.id);
    offs.push_back(int(out.size()));
    const auto& v = t.value(p);
    out.insert(out.end(), v.begin(), v.end());
  }
  const int total = int(out.size());
  const int io = t.next_id();
  return t.make(Shape{total}, std::move(out), parts, [ids, offs, io](Tape& t) {
    const auto& g = t.grad(io);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto& gp = t.grad(ids[k]);
      for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[offs[k] + i];
    }
  });
}

// Rows (all the same length) stacked into a [N,m] matrix.
inline Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw shape_error("stack_rows: no inputs");
  Tape& t = *rows[0].tape;
  const int m = int(t.value(rows[0]).size());
  std::vector<double> out;
  std::vector<int> ids;
  for (const Var& r : rows) {
    if (int(t.value(r).size()) != m) throw shape_error("stack_rows: ragged rows");
    ids.push_back(r.id);
    const auto& v = t.value(r);
    out.insert(out.end(), v.begin(), v.end());
  }
  const int io = t.next_id();
  return t.make(Shape{int(rows.size()), m}, std::move(out), rows, [ids, m, io](Tape& t) {
    const auto& g = t.grad(io);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      auto& gr = t.grad(ids[k]);
      for (int i = 0; i < m; ++i) gr[i] += g[k * m + i];
    }
  });
}

// Max over coordinates of |analytic - central difference| / max(1, |analytic|)
// for a scalar-valued function of one tensor.
inline double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x,
                         double eps = 1e-5) {
  Tape t;
  Var vx = t.input(x, true);
  Var y = f(t, vx);
  if (t.value(y).size() != 1) throw shape_error("grad_check: f must be scalar-valued");
  t.backward(y);
  const Tensor analytic = t.grad_tensor(vx);

  auto eval = [&](const Tensor& p) {
    Tape tt;
    Var v = tt.input(p, false);
    return tt.value(f(tt, v))[0];
  };

  double worst = 0.0;
  Tensor xp = x;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double x0 = x.data[i];
    xp.data[i] = x0 + eps;
    const double fp = eval(xp);
    xp.data[i] = x0 - eps;
    const double fm = eval(xp);
    xp.data[i] = x0;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double err = std::abs(analytic.data[i] - numeric) /
                       std::max(1.0, std::abs(analytic.data[i]));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace weakloc
