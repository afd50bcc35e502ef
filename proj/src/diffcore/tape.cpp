#include "cmf/tape.hpp"

#include <algorithm>
#include <cmath>

#include "cmf/errors.hpp"

namespace cmf::diff {
namespace {

Tensor as_matrix(const Tensor& t) {
  if (t.rank() == 2) return t;
  return t.reshaped(Shape{1, t.size()});
}

void require_same_shape(Var a, Var b, const char* op) {
  if (a.tape != b.tape) throw ArgumentError(std::string(op) + ": operands live on different tapes");
  if (a.value().shape() != b.value().shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.value().shape()) +
                         " and " + shape_string(b.value().shape()) + " differ");
  }
}

template <typename F>
Tensor map(const Tensor& a, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <typename F>
Tensor zip(const Tensor& a, const Tensor& b, F f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

}  // namespace

const Tensor& Var::value() const { return tape->value(*this); }

Var Tape::leaf(const Tensor& value) {
  require_finite(value, "leaf");
  Node n;
  n.value = as_matrix(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::constant(const Tensor& value) {
  require_finite(value, "constant");
  Node n;
  n.value = as_matrix(value);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Var Tape::record(Tensor value, const char* op, std::initializer_list<Var> inputs,
                 Backward backward) {
  return record(std::move(value), op, std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backward));
}

Var Tape::record(Tensor value, const char* op, std::span<const Var> inputs, Backward backward) {
  require_finite(value, op);
  Node n;
  n.value = std::move(value);
  n.op = op;
  for (const Var& in : inputs) {
    if (in.tape != this) throw ArgumentError(std::string(op) + ": input from another tape");
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor Tape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (!n.has_grad) return Tensor(n.value.shape());
  return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
    return;
  }
  auto dst = n.grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Tape::accumulate_block(Var v, const Tensor& g, std::size_t row, std::size_t col) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = Tensor(n.value.shape());
    n.has_grad = true;
  }
  for (std::size_t i = 0; i < g.rows(); ++i)
    for (std::size_t j = 0; j < g.cols(); ++j) n.grad(row + i, col + j) += g(i, j);
}

void Tape::backward(Var root) {
  if (root.tape != this) throw ArgumentError("backward: root from another tape");
  const Tensor& rv = nodes_[root.id].value;
  if (rv.size() != 1) {
    throw DimensionError("backward: root must be a single value, got " + shape_string(rv.shape()));
  }
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Tensor();
  }
  accumulate(root, Tensor(rv.shape(), 1.0));
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad || !n.backward) continue;
    if (!n.grad.all_finite()) {
      throw NumericError(std::string("non-finite gradient flowing into ") + n.op);
    }
    n.backward(*this, n.grad);
  }
}

Var operator+(Var a, Var b) {
  require_same_shape(a, b, "add");
  return a.tape->record(zip(a.value(), b.value(), [](double x, double y) { return x + y; }), "add",
                        {a, b}, [a, b](Tape& t, const Tensor& g) {
                          t.accumulate(a, g);
                          t.accumulate(b, g);
                        });
}

Var operator-(Var a, Var b) {
  require_same_shape(a, b, "sub");
  return a.tape->record(zip(a.value(), b.value(), [](double x, double y) { return x - y; }), "sub",
                        {a, b}, [a, b](Tape& t, const Tensor& g) {
                          t.accumulate(a, g);
                          t.accumulate(b, map(g, [](double x) { return -x; }));
                        });
}

Var operator*(Var a, Var b) {
  require_same_shape(a, b, "mul");
  return a.tape->record(zip(a.value(), b.value(), [](double x, double y) { return x * y; }), "mul",
                        {a, b}, [a, b](Tape& t, const Tensor& g) {
                          if (t.requires_grad(a))
                            t.accumulate(a, zip(g, b.value(), [](double x, double y) { return x * y; }));
                          if (t.requires_grad(b))
                            t.accumulate(b, zip(g, a.value(), [](double x, double y) { return x * y; }));
                        });
}

Var operator-(Var a) { return scale(a, -1.0); }

Var scale(Var a, double c) {
  return a.tape->record(map(a.value(), [c](double x) { return c * x; }), "scale", {a},
                        [a, c](Tape& t, const Tensor& g) {
                          t.accumulate(a, map(g, [c](double x) { return c * x; }));
                        });
}

Var add_scalar(Var a, double c) {
  return a.tape->record(map(a.value(), [c](double x) { return x + c; }), "add_scalar", {a},
                        [a](Tape& t, const Tensor& g) { t.accumulate(a, g); });
}

Var add_row(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (bv.rows() != 1 || bv.cols() != av.cols()) {
    throw DimensionError("add_row: cannot broadcast " + shape_string(bv.shape()) + " over " +
                         shape_string(av.shape()));
  }
  Tensor out = av;
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += bv(0, j);
  return a.tape->record(std::move(out), "add_row", {a, b}, [a, b](Tape& t, const Tensor& g) {
    t.accumulate(a, g);
    if (t.requires_grad(b)) {
      Tensor gb(Shape{1, g.cols()});
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gb(0, j) += g(i, j);
      t.accumulate(b, gb);
    }
  });
}

Var matmul(Var a, Var b) {
  return a.tape->record(matmul(a.value(), b.value()), "matmul", {a, b},
                        [a, b](Tape& t, const Tensor& g) {
                          if (t.requires_grad(a)) t.accumulate(a, matmul(g, b.value(), false, true));
                          if (t.requires_grad(b)) t.accumulate(b, matmul(a.value(), g, true, false));
                        });
}

Var activate(Var a, const Activation& act, int order) {
  if (order < 0 || order > 2) throw ArgumentError("activate: derivative order must be in [0, 2]");
  return a.tape->record(map(a.value(), [&](double x) { return act.eval(x, order); }), "activate",
                        {a}, [a, act, order](Tape& t, const Tensor& g) {
                          t.accumulate(a, zip(g, a.value(), [&](double gi, double x) {
                                         return gi * act.eval(x, order + 1);
                                       }));
                        });
}

Var square(Var a) {
  return a.tape->record(map(a.value(), [](double x) { return x * x; }), "square", {a},
                        [a](Tape& t, const Tensor& g) {
                          t.accumulate(a, zip(g, a.value(), [](double gi, double x) {
                                         return 2.0 * x * gi;
                                       }));
                        });
}

Var safe_sqrt(Var a) {
  for (double x : a.value().data()) {
    if (x < 0.0) throw DomainError("safe_sqrt: negative input");
  }
  return a.tape->record(map(a.value(), [](double x) { return std::sqrt(x); }), "sqrt", {a},
                        [a](Tape& t, const Tensor& g) {
                          t.accumulate(a, zip(g, a.value(), [](double gi, double x) {
                                         return x > 0.0 ? gi / (2.0 * std::sqrt(x)) : 0.0;
                                       }));
                        });
}

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return a.tape->record(Tensor(Shape{1, 1}, std::vector<double>{s}), "sum", {a},
                        [a](Tape& t, const Tensor& g) {
                          t.accumulate(a, Tensor(a.value().shape(), g[0]));
                        });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw DimensionError("mean: empty operand");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var row_sum(Var a) {
  const Tensor& av = a.value();
  Tensor out(Shape{av.rows(), 1});
  for (std::size_t i = 0; i < av.rows(); ++i)
    for (std::size_t j = 0; j < av.cols(); ++j) out(i, 0) += av(i, j);
  return a.tape->record(std::move(out), "row_sum", {a}, [a](Tape& t, const Tensor& g) {
    const Tensor& av = a.value();
    Tensor ga(av.shape());
    for (std::size_t i = 0; i < av.rows(); ++i)
      for (std::size_t j = 0; j < av.cols(); ++j) ga(i, j) = g(i, 0);
    t.accumulate(a, ga);
  });
}

Var column(Var a, std::size_t j) {
  const Tensor& av = a.value();
  if (j >= av.cols()) throw DimensionError("column: index out of range");
  Tensor out(Shape{av.rows(), 1});
  for (std::size_t i = 0; i < av.rows(); ++i) out(i, 0) = av(i, j);
  return a.tape->record(std::move(out), "column", {a},
                        [a, j](Tape& t, const Tensor& g) { t.accumulate_block(a, g, 0, j); });
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  if (begin + count > av.rows()) throw DimensionError("slice_rows: range out of bounds");
  const std::size_t c = av.cols();
  std::vector<double> data(av.data().begin() + static_cast<std::ptrdiff_t>(begin * c),
                           av.data().begin() + static_cast<std::ptrdiff_t>((begin + count) * c));
  return a.tape->record(Tensor(Shape{count, c}, std::move(data)), "slice_rows", {a},
                        [a, begin](Tape& t, const Tensor& g) { t.accumulate_block(a, g, begin, 0); });
}

Var hconcat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("hconcat: no operands");
  const std::size_t r = parts[0].rows();
  std::size_t c = 0;
  for (const Var& p : parts) {
    if (p.rows() != r) throw DimensionError("hconcat: row counts differ");
    c += p.cols();
  }
  Tensor out(Shape{r, c});
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
    off += pv.cols();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape->record(std::move(out), "hconcat", parts,
                               [inputs](Tape& t, const Tensor& g) {
                                 std::size_t off = 0;
                                 for (const Var& p : inputs) {
                                   const std::size_t pc = p.cols();
                                   if (t.requires_grad(p)) {
                                     Tensor gp(Shape{g.rows(), pc});
                                     for (std::size_t i = 0; i < g.rows(); ++i)
                                       for (std::size_t j = 0; j < pc; ++j) gp(i, j) = g(i, off + j);
                                     t.accumulate(p, gp);
                                   }
                                   off += pc;
                                 }
                               });
}

Var vconcat(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("vconcat: no operands");
  const std::size_t c = parts[0].cols();
  std::vector<double> data;
  std::size_t r = 0;
  for (const Var& p : parts) {
    if (p.cols() != c) throw DimensionError("vconcat: column counts differ");
    data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    r += p.rows();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return parts[0].tape->record(Tensor(Shape{r, c}, std::move(data)), "vconcat", parts,
                               [inputs](Tape& t, const Tensor& g) {
                                 std::size_t off = 0;
                                 for (const Var& p : inputs) {
                                   const std::size_t pr = p.rows();
                                   if (t.requires_grad(p)) {
                                     const std::size_t c = g.cols();
                                     std::vector<double> d(
                                         g.data().begin() + static_cast<std::ptrdiff_t>(off * c),
                                         g.data().begin() + static_cast<std::ptrdiff_t>((off + pr) * c));
                                     t.accumulate(p, Tensor(Shape{pr, c}, std::move(d)));
                                   }
                                   off += pr;
                                 }
                               });
}

Var view(Var flat, std::size_t offset, std::size_t rows, std::size_t cols) {
  const Tensor& fv = flat.value();
  if (fv.rows() != 1 || offset + rows * cols > fv.cols()) {
    throw DimensionError("view: block of " + std::to_string(rows * cols) + " values at offset " +
                         std::to_string(offset) + " exceeds " + shape_string(fv.shape()));
  }
  std::vector<double> data(fv.data().begin() + static_cast<std::ptrdiff_t>(offset),
                           fv.data().begin() + static_cast<std::ptrdiff_t>(offset + rows * cols));
  return flat.tape->record(Tensor(Shape{rows, cols}, std::move(data)), "view", {flat},
                           [flat, offset](Tape& t, const Tensor& g) {
                             t.accumulate_block(flat, g.reshaped(Shape{1, g.size()}), 0, offset);
                           });
}

Var bce_with_logits(Var logits, const Tensor& targets, double clamp) {
  const Tensor& lv = logits.value();
  if (lv.size() != targets.size()) throw DimensionError("bce: logits and targets differ in size");
  if (lv.size() == 0) throw DimensionError("bce: empty batch");
  const double n = static_cast<double>(lv.size());
  double total = 0.0;
  for (std::size_t i = 0; i < lv.size(); ++i) {
    const double p = std::clamp(logistic(lv[i]), clamp, 1.0 - clamp);
    const double y = targets[i];
    total -= y * std::log(p) + (1.0 - y) * std::log(1.0 - p);
  }
  return logits.tape->record(
      Tensor(Shape{1, 1}, std::vector<double>{total / n}), "bce", {logits},
      [logits, targets, clamp, n](Tape& t, const Tensor& g) {
        const Tensor& lv = logits.value();
        Tensor gl(lv.shape());
        for (std::size_t i = 0; i < lv.size(); ++i) {
          const double p = logistic(lv[i]);
          gl[i] = (p > clamp && p < 1.0 - clamp) ? g[0] * (p - targets[i]) / n : 0.0;
        }
        t.accumulate(logits, gl);
      });
}

ValueAndGrad value_and_grad(const ScalarFn& f, const Tensor& p) {
  Tape tape;
  Var x = tape.leaf(p);
  Var out = f(tape, x);
  if (out.value().size() != 1) {
    throw DimensionError("value_and_grad: function must return a single value");
  }
  tape.backward(out);
  return {out.value()[0], tape.grad(x).reshaped(p.shape())};
}

Tensor grad_scalar(const ScalarFn& f, const Tensor& p) { return value_and_grad(f, p).grad; }

}  // namespace cmf::diff
