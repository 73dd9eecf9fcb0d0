#include "platoon/nn.hpp"

#include <algorithm>
#include <cmath>

#include "platoon/errors.hpp"

namespace platoon {

GruParams GruParams::declare(ParamStore& store, const std::string& prefix, std::size_t input_size,
                             std::size_t hidden_size) {
  using K = ParamBlock::Kind;
  GruParams p;
  p.input_size = input_size;
  p.hidden_size = hidden_size;
  p.w_z = store.add(prefix + "W_z", hidden_size, input_size);
  p.w_r = store.add(prefix + "W_r", hidden_size, input_size);
  p.w_h = store.add(prefix + "W_h", hidden_size, input_size);
  p.u_z = store.add(prefix + "U_z", hidden_size, hidden_size);
  p.u_r = store.add(prefix + "U_r", hidden_size, hidden_size);
  p.u_h = store.add(prefix + "U_h", hidden_size, hidden_size);
  p.b_z = store.add(prefix + "b_z", 1, hidden_size, K::kBias);
  p.b_r = store.add(prefix + "b_r", 1, hidden_size, K::kBias);
  p.b_h = store.add(prefix + "b_h", 1, hidden_size, K::kBias);
  return p;
}

LinearParams LinearParams::declare(ParamStore& store, const std::string& prefix, std::size_t in,
                                   std::size_t out) {
  LinearParams p;
  p.in = in;
  p.out = out;
  p.weight = store.add(prefix + "weight", out, in);
  p.bias = store.add(prefix + "bias", 1, out, ParamBlock::Kind::kBias);
  return p;
}

MlpParams MlpParams::declare(ParamStore& store, const std::string& prefix, std::size_t in,
                             const std::vector<std::size_t>& hidden_widths, std::size_t out) {
  MlpParams p;
  std::size_t width = in;
  for (std::size_t i = 0; i < hidden_widths.size(); ++i) {
    p.layers.push_back(
        LinearParams::declare(store, prefix + "fc" + std::to_string(i) + ".", width,
                              hidden_widths[i]));
    width = hidden_widths[i];
  }
  p.layers.push_back(LinearParams::declare(
      store, prefix + "fc" + std::to_string(hidden_widths.size()) + ".", width, out));
  return p;
}

namespace {

template <typename Store>
Var gru_impl(Tape& tape, Store& store, const GruParams& p, Var h, Var x) {
  if (x.cols() != p.input_size) throw ShapeError("gru_forward: input size mismatch");
  if (h.cols() != p.hidden_size) throw ShapeError("gru_forward: hidden size mismatch");
  if (h.rows() != x.rows()) throw ShapeError("gru_forward: batch size mismatch");
  auto gate = [&](std::size_t w, std::size_t u, std::size_t b, Var hh) {
    return add(linear(x, tape.param(store, w), tape.param(store, b)),
               matmul_nt(hh, tape.param(store, u)));
  };
  const Var z = sigmoid(gate(p.w_z, p.u_z, p.b_z, h));
  const Var r = sigmoid(gate(p.w_r, p.u_r, p.b_r, h));
  const Var candidate = tanh(gate(p.w_h, p.u_h, p.b_h, mul(r, h)));
  return add(h, mul(z, sub(candidate, h)));
}

template <typename Store>
Var mlp_impl(Tape& tape, Store& store, const MlpParams& p, Var x, Activation act) {
  if (p.layers.empty()) throw ShapeError("mlp_forward: no layers");
  if (x.cols() != p.input_size()) throw ShapeError("mlp_forward: input size mismatch");
  Var out = x;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    const auto& layer = p.layers[i];
    out = linear(out, tape.param(store, layer.weight), tape.param(store, layer.bias));
    if (i + 1 < p.layers.size() && act == Activation::kRelu) out = relu(out);
  }
  return out;
}

}  // namespace

Var gru_forward(Tape& tape, ParamStore& store, const GruParams& p, Var h_prev, Var x) {
  return gru_impl(tape, store, p, h_prev, x);
}

Var gru_forward(Tape& tape, const ParamStore& store, const GruParams& p, Var h_prev, Var x) {
  return gru_impl(tape, store, p, h_prev, x);
}

Var mlp_forward(Tape& tape, ParamStore& store, const MlpParams& p, Var x, Activation act) {
  return mlp_impl(tape, store, p, x, act);
}

Var mlp_forward(Tape& tape, const ParamStore& store, const MlpParams& p, Var x, Activation act) {
  return mlp_impl(tape, store, p, x, act);
}

Matrix gru_forward(const ParamStore& store, const GruParams& p, const Matrix& h_prev,
                   const Matrix& x) {
  Tape tape;
  const Var h = gru_forward(tape, store, p, tape.constant(h_prev), tape.constant(x));
  return h.value();
}

Matrix mlp_forward(const ParamStore& store, const MlpParams& p, const Matrix& x,
                   Activation act) {
  Tape tape;
  return mlp_forward(tape, store, p, tape.constant(x), act).value();
}

void init_params(ParamStore& store, InitScheme scheme, Rng& rng) {
  for (auto& b : store.blocks()) {
    if (scheme == InitScheme::kZeros || b.kind == ParamBlock::Kind::kBias) {
      b.value.fill(0.0);
      continue;
    }
    const double bound = 1.0 / std::sqrt(static_cast<double>(b.value.cols()));
    for (double& v : b.value.values()) v = uniform(rng, -bound, bound);
  }
}

GradCheckReport grad_check(const std::function<double(ParamStore&, bool)>& loss,
                           ParamStore& params, const GradCheckOptions& options) {
  params.zero_grad();
  loss(params, true);
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const auto& b : params.blocks()) analytic.push_back(b.grad);

  GradCheckReport report;
  for (std::size_t bi = 0; bi < params.size(); ++bi) {
    auto& block = params.block(bi);
    double block_max = 0.0;
    for (std::size_t i = 0; i < block.value.size(); ++i) {
      const double original = block.value[i];
      block.value[i] = original + options.step;
      const double up = loss(params, false);
      block.value[i] = original - options.step;
      const double down = loss(params, false);
      block.value[i] = original;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[bi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      block_max = std::max(block_max, std::abs(a - numeric) / denom);
    }
    report.block_names.push_back(block.name);
    report.block_max_rel_error.push_back(block_max);
    report.max_rel_error = std::max(report.max_rel_error, block_max);
  }
  report.passed = report.max_rel_error < options.tolerance;
  return report;
}

}  // namespace platoon
