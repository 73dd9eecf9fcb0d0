#include <gtest/gtest.h>

#include <cmath>

#include "../support/oracles.hpp"
#include "platoon/errors.hpp"
#include "platoon/nn.hpp"

using namespace platoon;

namespace {

std::vector<double> block_values(const ParamStore& s, std::size_t i) { return s.block(i).value.values(); }

oracle::ScratchGru scratch_from(const ParamStore& s, const GruParams& p) {
  oracle::ScratchGru g;
  g.in = p.input_size;
  g.hidden = p.hidden_size;
  g.wz = block_values(s, p.w_z);
  g.wr = block_values(s, p.w_r);
  g.wh = block_values(s, p.w_h);
  g.uz = block_values(s, p.u_z);
  g.ur = block_values(s, p.u_r);
  g.uh = block_values(s, p.u_h);
  g.bz = block_values(s, p.b_z);
  g.br = block_values(s, p.b_r);
  g.bh = block_values(s, p.b_h);
  return g;
}

void randomize(ParamStore& s, Rng& rng, double range) {
  for (auto& b : s.blocks())
    for (auto& v : b.value.values()) v = uniform(rng, -range, range);
}

}  // namespace

TEST(Gru, ZeroParametersGiveZeroState) {
  ParamStore s;
  const GruParams p = GruParams::declare(s, "g.", 3, 4);
  const Matrix h = gru_forward(s, p, Matrix(1, 4), Matrix(1, 3, 0.7));
  EXPECT_EQ(h, Matrix(1, 4));
}

TEST(Gru, ClosedUpdateGateKeepsPreviousState) {
  Rng rng = make_rng(51);
  ParamStore s;
  const GruParams p = GruParams::declare(s, "g.", 3, 4);
  randomize(s, rng, 0.5);
  s.block(p.b_z).value.fill(-1e3);
  Matrix h(2, 4);
  for (auto& v : h.values()) v = uniform(rng, -1, 1);
  Matrix x(2, 3);
  for (auto& v : x.values()) v = uniform(rng, -1, 1);
  EXPECT_EQ(gru_forward(s, p, h, x), h);
}

TEST(Gru, MatchesScratchImplementation) {
  Rng rng = make_rng(52);
  double worst = 0;
  for (int draw = 0; draw < 100; ++draw) {
    ParamStore s;
    const GruParams p = GruParams::declare(s, "g.", 5, 6);
    randomize(s, rng, 1.0);
    std::vector<double> h(6), x(5);
    for (auto& v : h) v = uniform(rng, -1, 1);
    for (auto& v : x) v = uniform(rng, -2, 2);
    const std::vector<double> ref = scratch_from(s, p).step(h, x);
    const Matrix out = gru_forward(s, p, Matrix::row_vector(h), Matrix::row_vector(x));
    for (std::size_t i = 0; i < 6; ++i) {
      worst = std::max(worst, std::abs(out[i] - ref[i]));
      EXPECT_LT(std::abs(out[i]), 1.0);
    }
  }
  EXPECT_LT(worst, 1e-10);
}

TEST(Gru, ShapeMismatchThrows) {
  ParamStore s;
  const GruParams p = GruParams::declare(s, "g.", 3, 4);
  EXPECT_THROW(gru_forward(s, p, Matrix(1, 3), Matrix(1, 3)), ShapeError);
  EXPECT_THROW(gru_forward(s, p, Matrix(1, 4), Matrix(1, 2)), ShapeError);
}

TEST(Mlp, AffineAndRelu) {
  ParamStore s;
  const MlpParams one = MlpParams::declare(s, "m.", 1, {}, 1);
  s.block(one.layers[0].weight).value[0] = 2.0;
  s.block(one.layers[0].bias).value[0] = 1.0;
  EXPECT_EQ(mlp_forward(s, one, Matrix(1, 1, 3.0), Activation::kIdentity)[0], 7.0);

  ParamStore z;
  const MlpParams zero = MlpParams::declare(z, "m.", 3, {4}, 2);
  EXPECT_EQ(mlp_forward(z, zero, Matrix(1, 3, 1.0)), Matrix(1, 2));

  ParamStore r;
  const MlpParams hinge = MlpParams::declare(r, "m.", 1, {1}, 1);
  r.block(hinge.layers[0].weight).value[0] = 1.0;
  r.block(hinge.layers[1].weight).value[0] = 1.0;
  EXPECT_EQ(mlp_forward(r, hinge, Matrix(1, 1, -1.0))[0], 0.0);
  EXPECT_EQ(mlp_forward(r, hinge, Matrix(1, 1, -1.0), Activation::kIdentity)[0], -1.0);
}

TEST(Init, ZerosFanInBoundAndDeterminism) {
  ParamStore a;
  MlpParams::declare(a, "m.", 100, {50}, 3);
  Rng rng = make_rng(53);
  init_params(a, InitScheme::kUniformFanIn, rng);
  for (const auto& b : a.blocks()) {
    const double bound = b.kind == ParamBlock::Kind::kBias ? 0.0 : 1.0 / std::sqrt(double(b.value.cols()));
    for (double v : b.value.values()) EXPECT_LE(std::abs(v), bound) << b.name;
  }
  EXPECT_LE(std::abs(a.block(0).value[0]), 0.1);

  ParamStore b;
  MlpParams::declare(b, "m.", 100, {50}, 3);
  Rng rng2 = make_rng(53);
  init_params(b, InitScheme::kUniformFanIn, rng2);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.block(i).value, b.block(i).value);

  init_params(b, InitScheme::kZeros, rng2);
  for (const auto& blk : b.blocks())
    for (double v : blk.value.values()) EXPECT_EQ(v, 0.0);
}

TEST(GradCheck, LinearFunctionExact) {
  ParamStore s;
  s.add("w", 1, 3);
  s.block(0).value = Matrix(1, 3, std::vector<double>{0.3, -1.0, 2.0});
  const Matrix x(1, 3, std::vector<double>{1.0, 2.0, -3.0});
  auto loss = [&](ParamStore& st, bool with_grad) {
    Tape t;
    const Var y = matmul_nt(t.constant(x), t.param(st, 0));
    if (with_grad) t.backward(y);
    return y.value()[0];
  };
  const auto r = grad_check(loss, s);
  EXPECT_TRUE(r.passed);
  EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(GradCheck, CorruptedGradientFails) {
  ParamStore s;
  s.add("w", 1, 2);
  s.block(0).value = Matrix(1, 2, std::vector<double>{0.3, -0.4});
  auto loss = [](ParamStore& st, bool with_grad) {
    Tape t;
    const Var y = sum_cols(tanh(t.param(st, 0)));
    if (with_grad) {
      t.backward(y);
      st.block(0).grad[1] += 0.5;
    }
    return y.value()[0];
  };
  EXPECT_FALSE(grad_check(loss, s).passed);
}

TEST(GradCheck, GruIntoMlpCompositeOnRandomConfigurations) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng = make_rng(600 + seed);
    ParamStore s;
    const GruParams g = GruParams::declare(s, "g.", 4, 5);
    const MlpParams m = MlpParams::declare(s, "m.", 5, {6, 6}, 2);
    init_params(s, InitScheme::kUniformFanIn, rng);
    for (auto& b : s.blocks())
      if (b.kind == ParamBlock::Kind::kBias)
        for (auto& v : b.value.values()) v = uniform(rng, -0.1, 0.1);
    Matrix h(3, 5), x(3, 4);
    for (auto& v : h.values()) v = uniform(rng, -1, 1);
    for (auto& v : x.values()) v = uniform(rng, -1, 1);
    auto loss = [&](ParamStore& st, bool with_grad) {
      Tape t;
      const Var hn = gru_forward(t, st, g, t.constant(h), t.constant(x));
      const Var y = mean(square(tanh(mlp_forward(t, st, m, hn))));
      if (with_grad) t.backward(y);
      return y.value()[0];
    };
    const auto r = grad_check(loss, s);
    EXPECT_TRUE(r.passed) << "seed " << seed << " err " << r.max_rel_error;
    EXPECT_LT(r.max_rel_error, 1e-4);
  }
}
