#include "platoon/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "platoon/errors.hpp"
#include "platoon/kernels.hpp"

namespace platoon {

std::size_t ParamStore::add(std::string name, std::size_t rows, std::size_t cols,
                            ParamBlock::Kind kind) {
  for (const auto& b : blocks_) {
    if (b.name == name) throw InvalidArgument("duplicate parameter block " + name);
  }
  blocks_.push_back({std::move(name), kind, Matrix(rows, cols), Matrix(rows, cols)});
  return blocks_.size() - 1;
}

std::size_t ParamStore::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks_) n += b.value.size();
  return n;
}

std::size_t ParamStore::index(const std::string& name) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].name == name) return i;
  }
  throw InvalidArgument("unknown parameter block " + name);
}

void ParamStore::zero_grad() {
  for (auto& b : blocks_) b.grad.fill(0.0);
}

bool ParamStore::same_layout(const ParamStore& other) const {
  if (blocks_.size() != other.blocks_.size()) return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (blocks_[i].name != other.blocks_[i].name ||
        !blocks_[i].value.same_shape(other.blocks_[i].value)) {
      return false;
    }
  }
  return true;
}

const Matrix& Var::value() const {
  if (tape == nullptr) throw StateError("Var is not attached to a tape");
  return tape->value(id);
}

Var Tape::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Tape::input(Matrix value) {
  Var v = push(std::move(value), true, nullptr);
  return v;
}

Var Tape::param(ParamStore& store, std::size_t block) {
  auto& b = store.block(block);
  Node node;
  node.ref = &b.value;
  node.grad_target = &b.grad;
  node.needs_grad = true;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Var Tape::param(const ParamStore& store, std::size_t block) {
  Node node;
  node.ref = &store.block(block).value;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

const Matrix& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.ref != nullptr ? *n.ref : n.value;
}

const Matrix& Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  return n.grad_target != nullptr ? *n.grad_target : n.grad;
}

void Tape::note_kink(double distance) { nearest_kink_ = std::min(nearest_kink_, distance); }

Var Tape::push(Matrix value, bool needs_grad, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = needs_grad;
  node.backward = needs_grad ? std::move(backward) : nullptr;
  nodes_.push_back(std::move(node));
  return {this, nodes_.size() - 1};
}

Matrix& Tape::grad_acc(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad_target != nullptr) return *n.grad_target;
  if (n.grad.empty()) {
    const Matrix& v = n.ref != nullptr ? *n.ref : n.value;
    n.grad = Matrix(v.rows(), v.cols());
  }
  return n.grad;
}

void Tape::backward(Var output, const Matrix& seed) {
  if (output.tape != this || output.id >= nodes_.size()) {
    throw StateError("backward called before a forward pass was recorded");
  }
  if (!seed.same_shape(value(output.id))) {
    throw ShapeError("backward seed shape does not match the output");
  }
  for (Node& n : nodes_) {
    if (n.grad_target == nullptr) n.grad = Matrix();
  }
  if (!nodes_[output.id].needs_grad) return;
  Matrix& g = grad_acc(output.id);
  for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
  for (std::size_t i = output.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.backward || n.grad.empty()) continue;
    n.backward(*this, i);
  }
}

void Tape::backward(Var scalar_output) {
  if (scalar_output.tape != this || scalar_output.id >= nodes_.size()) {
    throw StateError("backward called before a forward pass was recorded");
  }
  const Matrix& v = value(scalar_output.id);
  if (v.rows() != 1 || v.cols() != 1) throw ShapeError("backward without seed needs a scalar");
  backward(scalar_output, Matrix(1, 1, 1.0));
}

namespace {

Tape& tape_of(Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) throw StateError("operands on different tapes");
  return *a.tape;
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) throw ShapeError(std::string(op) + ": operand shapes differ");
}

// Element-wise unary op with derivative computed from (input, output).
template <typename F, typename D>
Var unary(Var a, F f, D df) {
  Tape& t = *a.tape;
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  const std::size_t ia = a.id;
  return t.push(std::move(y), t.needs_grad(ia), [ia, df](Tape& tp, std::size_t self) {
    const Matrix& x = tp.value(ia);
    const Matrix& y = tp.value(self);
    const Matrix& g = tp.grad(Var{&tp, self});
    Matrix& ga = tp.grad_acc(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
  });
}

}  // namespace

Var matmul_nt(Var x, Var weight) {
  Tape& t = tape_of(x, weight);
  const Matrix& xv = x.value();
  const Matrix& wv = weight.value();
  if (xv.cols() != wv.cols()) throw ShapeError("linear: input width does not match weight");
  Matrix y;
  kernels::gemm_nt(xv, wv, y);
  const std::size_t ix = x.id, iw = weight.id;
  const bool ng = t.needs_grad(ix) || t.needs_grad(iw);
  return t.push(std::move(y), ng, [ix, iw](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{&tp, self});
    if (tp.needs_grad(ix)) kernels::gemm_nn_acc(g, tp.value(iw), tp.grad_acc(ix));
    if (tp.needs_grad(iw)) kernels::gemm_tn_acc(g, tp.value(ix), tp.grad_acc(iw));
  });
}

Var linear(Var x, Var weight, Var bias) {
  Tape& t = tape_of(x, weight);
  tape_of(x, bias);
  const Matrix& xv = x.value();
  const Matrix& wv = weight.value();
  const Matrix& bv = bias.value();
  if (xv.cols() != wv.cols()) throw ShapeError("linear: input width does not match weight");
  if (bv.rows() != 1 || bv.cols() != wv.rows()) throw ShapeError("linear: bias shape");
  Matrix y;
  kernels::gemm_nt(xv, wv, y);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto row = y.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bv[c];
  }
  const std::size_t ix = x.id, iw = weight.id, ib = bias.id;
  const bool ng = t.needs_grad(ix) || t.needs_grad(iw) || t.needs_grad(ib);
  return t.push(std::move(y), ng, [ix, iw, ib](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{&tp, self});
    if (tp.needs_grad(ix)) kernels::gemm_nn_acc(g, tp.value(iw), tp.grad_acc(ix));
    if (tp.needs_grad(iw)) kernels::gemm_tn_acc(g, tp.value(ix), tp.grad_acc(iw));
    if (tp.needs_grad(ib)) {
      Matrix& gb = tp.grad_acc(ib);
      for (std::size_t r = 0; r < g.rows(); ++r) {
        const auto row = g.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
      }
    }
  });
}

Var add(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "add");
  Matrix y = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(y), t.needs_grad(ia) || t.needs_grad(ib),
                [ia, ib](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.grad(Var{&tp, self});
                  for (std::size_t id : {ia, ib}) {
                    if (!tp.needs_grad(id)) continue;
                    Matrix& ga = tp.grad_acc(id);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                });
}

Var sub(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  Matrix y = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] -= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(y), t.needs_grad(ia) || t.needs_grad(ib),
                [ia, ib](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.grad(Var{&tp, self});
                  if (tp.needs_grad(ia)) {
                    Matrix& ga = tp.grad_acc(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
                  }
                  if (tp.needs_grad(ib)) {
                    Matrix& gb = tp.grad_acc(ib);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                  }
                });
}

Var mul(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "mul");
  Matrix y = a.value();
  const Matrix& bv = b.value();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(y), t.needs_grad(ia) || t.needs_grad(ib),
                [ia, ib](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.grad(Var{&tp, self});
                  if (tp.needs_grad(ia)) {
                    const Matrix& bv = tp.value(ib);
                    Matrix& ga = tp.grad_acc(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
                  }
                  if (tp.needs_grad(ib)) {
                    const Matrix& av = tp.value(ia);
                    Matrix& gb = tp.grad_acc(ib);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
                  }
                });
}

Var scale(Var a, double c) {
  return unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Var add_scalar(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  for (double x : a.value().values()) a.tape->note_kink(std::abs(x));
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
               [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var clamp(Var a, double lo, double hi) {
  for (double x : a.value().values()) a.tape->note_kink(std::min(std::abs(x - lo), std::abs(x - hi)));
  return unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
               [lo, hi](double x, double) { return x >= lo && x <= hi ? 1.0 : 0.0; });
}

Var log_one_minus_tanh_sq(Var u) {
  // log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u)); derivative -2 tanh(u).
  return unary(
      u,
      [](double x) {
        const double z = -2.0 * x;
        const double softplus = z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
        return 2.0 * (std::numbers::ln2 - x - softplus);
      },
      [](double x, double) { return -2.0 * std::tanh(x); });
}

Var minimum(Var a, Var b) {
  Tape& t = tape_of(a, b);
  require_same_shape(a.value(), b.value(), "minimum");
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  Matrix y(av.rows(), av.cols());
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = std::min(av[i], bv[i]);
    t.note_kink(std::abs(av[i] - bv[i]));
  }
  const std::size_t ia = a.id, ib = b.id;
  return t.push(std::move(y), t.needs_grad(ia) || t.needs_grad(ib),
                [ia, ib](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.grad(Var{&tp, self});
                  const Matrix& av = tp.value(ia);
                  const Matrix& bv = tp.value(ib);
                  // Ties route to the first operand.
                  if (tp.needs_grad(ia)) {
                    Matrix& ga = tp.grad_acc(ia);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      if (av[i] <= bv[i]) ga[i] += g[i];
                    }
                  }
                  if (tp.needs_grad(ib)) {
                    Matrix& gb = tp.grad_acc(ib);
                    for (std::size_t i = 0; i < g.size(); ++i) {
                      if (!(av[i] <= bv[i])) gb[i] += g[i];
                    }
                  }
                });
}

Var concat_cols(Var a, Var b) {
  Tape& t = tape_of(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.rows() != bv.rows()) throw ShapeError("concat_cols: row counts differ");
  Matrix y(av.rows(), av.cols() + bv.cols());
  for (std::size_t r = 0; r < y.rows(); ++r) {
    auto out = y.row(r);
    std::copy(av.row(r).begin(), av.row(r).end(), out.begin());
    std::copy(bv.row(r).begin(), bv.row(r).end(), out.begin() + av.cols());
  }
  const std::size_t ia = a.id, ib = b.id, na = av.cols();
  return t.push(std::move(y), t.needs_grad(ia) || t.needs_grad(ib),
                [ia, ib, na](Tape& tp, std::size_t self) {
                  const Matrix& g = tp.grad(Var{&tp, self});
                  if (tp.needs_grad(ia)) {
                    Matrix& ga = tp.grad_acc(ia);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      for (std::size_t c = 0; c < na; ++c) ga(r, c) += g(r, c);
                    }
                  }
                  if (tp.needs_grad(ib)) {
                    Matrix& gb = tp.grad_acc(ib);
                    for (std::size_t r = 0; r < g.rows(); ++r) {
                      for (std::size_t c = 0; c < gb.cols(); ++c) gb(r, c) += g(r, na + c);
                    }
                  }
                });
}

Var slice_cols(Var a, std::size_t begin, std::size_t count) {
  Tape& t = *a.tape;
  const Matrix& av = a.value();
  if (begin + count > av.cols()) throw ShapeError("slice_cols: range out of bounds");
  Matrix y(av.rows(), count);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    for (std::size_t c = 0; c < count; ++c) y(r, c) = av(r, begin + c);
  }
  const std::size_t ia = a.id;
  return t.push(std::move(y), t.needs_grad(ia), [ia, begin](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{&tp, self});
    Matrix& ga = tp.grad_acc(ia);
    for (std::size_t r = 0; r < g.rows(); ++r) {
      for (std::size_t c = 0; c < g.cols(); ++c) ga(r, begin + c) += g(r, c);
    }
  });
}

Var sum_cols(Var a) {
  Tape& t = *a.tape;
  const Matrix& av = a.value();
  Matrix y(av.rows(), 1);
  for (std::size_t r = 0; r < av.rows(); ++r) {
    double s = 0.0;
    for (double v : av.row(r)) s += v;
    y(r, 0) = s;
  }
  const std::size_t ia = a.id;
  return t.push(std::move(y), t.needs_grad(ia), [ia](Tape& tp, std::size_t self) {
    const Matrix& g = tp.grad(Var{&tp, self});
    Matrix& ga = tp.grad_acc(ia);
    for (std::size_t r = 0; r < ga.rows(); ++r) {
      for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(r, 0);
    }
  });
}

Var mean(Var a) {
  Tape& t = *a.tape;
  const Matrix& av = a.value();
  if (av.empty()) throw ShapeError("mean of an empty matrix");
  double s = 0.0;
  for (double v : av.values()) s += v;
  const double inv = 1.0 / static_cast<double>(av.size());
  const std::size_t ia = a.id;
  return t.push(Matrix(1, 1, s * inv), t.needs_grad(ia), [ia, inv](Tape& tp, std::size_t self) {
    const double g = tp.grad(Var{&tp, self})[0];
    Matrix& ga = tp.grad_acc(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g * inv;
  });
}

}  // namespace platoon
