#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "platoon/autodiff.hpp"
#include "platoon/random.hpp"

namespace platoon {

/// Block indices of one GRU cell inside a ParamStore.
///   z  = sigmoid(W_z x + U_z h + b_z)
///   r  = sigmoid(W_r x + U_r h + b_r)
///   h~ = tanh(W_h x + U_h (r * h) + b_h)
///   h' = (1 - z) * h + z * h~
struct GruParams {
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;
  std::size_t w_z = 0, w_r = 0, w_h = 0;
  std::size_t u_z = 0, u_r = 0, u_h = 0;
  std::size_t b_z = 0, b_r = 0, b_h = 0;

  static GruParams declare(ParamStore& store, const std::string& prefix, std::size_t input_size,
                           std::size_t hidden_size);
};

struct LinearParams {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight = 0;
  std::size_t bias = 0;

  static LinearParams declare(ParamStore& store, const std::string& prefix, std::size_t in,
                              std::size_t out);
};

enum class Activation { kRelu, kIdentity };

/// Feed-forward stack: hidden layers use the given activation, the final layer
/// is always affine.
struct MlpParams {
  std::vector<LinearParams> layers;

  static MlpParams declare(ParamStore& store, const std::string& prefix, std::size_t in,
                           const std::vector<std::size_t>& hidden_widths, std::size_t out);
  std::size_t input_size() const { return layers.front().in; }
  std::size_t output_size() const { return layers.back().out; }
};

// Tape-level forwards. Passing a non-const store records tracked parameters;
// a const store records frozen ones.
Var gru_forward(Tape& tape, ParamStore& store, const GruParams& p, Var h_prev, Var x);
Var gru_forward(Tape& tape, const ParamStore& store, const GruParams& p, Var h_prev, Var x);
Var mlp_forward(Tape& tape, ParamStore& store, const MlpParams& p, Var x,
                Activation hidden_activation = Activation::kRelu);
Var mlp_forward(Tape& tape, const ParamStore& store, const MlpParams& p, Var x,
                Activation hidden_activation = Activation::kRelu);

// Value-level conveniences (no gradient).
Matrix gru_forward(const ParamStore& store, const GruParams& p, const Matrix& h_prev,
                   const Matrix& x);
Matrix mlp_forward(const ParamStore& store, const MlpParams& p, const Matrix& x,
                   Activation hidden_activation = Activation::kRelu);

enum class InitScheme { kUniformFanIn, kZeros };

/// Weights uniform in +-1/sqrt(fan_in), biases zero; or everything zero.
void init_params(ParamStore& store, InitScheme scheme, Rng& rng);

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Denominator floor of the relative error; keeps near-zero gradients from
  // turning finite-difference round-off into large relative errors.
  double floor = 1e-6;
};

struct GradCheckReport {
  std::vector<std::string> block_names;
  std::vector<double> block_max_rel_error;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// `loss(store, with_grad)` returns a scalar; when `with_grad` is true it must
/// also accumulate d loss / d params into the store. Compares those analytic
/// gradients with central differences over every parameter.
GradCheckReport grad_check(const std::function<double(ParamStore&, bool)>& loss,
                           ParamStore& params, const GradCheckOptions& options = {});

}  // namespace platoon
