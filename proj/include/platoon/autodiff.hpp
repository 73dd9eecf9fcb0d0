#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "platoon/matrix.hpp"

namespace platoon {

/// Named parameter blocks with parallel gradient accumulators.
struct ParamBlock {
  enum class Kind { kWeight, kBias };
  std::string name;
  Kind kind = Kind::kWeight;
  Matrix value;
  Matrix grad;
};

class ParamStore {
 public:
  std::size_t add(std::string name, std::size_t rows, std::size_t cols,
                  ParamBlock::Kind kind = ParamBlock::Kind::kWeight);

  std::size_t size() const { return blocks_.size(); }
  std::size_t parameter_count() const;
  std::size_t index(const std::string& name) const;

  ParamBlock& block(std::size_t i) { return blocks_.at(i); }
  const ParamBlock& block(std::size_t i) const { return blocks_.at(i); }
  std::vector<ParamBlock>& blocks() { return blocks_; }
  const std::vector<ParamBlock>& blocks() const { return blocks_; }

  void zero_grad();
  bool same_layout(const ParamStore& other) const;

 private:
  std::vector<ParamBlock> blocks_;
};

class Tape;

/// Handle to a node on a Tape. Values are matrices whose rows are samples.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Matrix& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Records matrix-valued operations for one forward pass and propagates
/// adjoints back through them. Gradients of tracked parameters accumulate
/// into the owning ParamStore; nothing is zeroed implicitly.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf with no gradient.
  Var constant(Matrix value);
  /// Leaf whose gradient is kept and readable after backward.
  Var input(Matrix value);
  /// Tracked parameter: backward accumulates into store.block(i).grad.
  Var param(ParamStore& store, std::size_t block);
  /// Frozen parameter: used by value only, no gradient is produced for it.
  Var param(const ParamStore& store, std::size_t block);

  const Matrix& value(std::size_t id) const;
  /// Gradient of a node after backward; an empty matrix if none reached it.
  const Matrix& grad(Var v) const;
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Smallest distance of any relu, clamp or minimum input from its switching
  /// point seen so far. Finite differences are only meaningful when a
  /// perturbation cannot cross one.
  double nearest_kink() const { return nearest_kink_; }
  void note_kink(double distance);

  void backward(Var output, const Matrix& seed);
  /// Seeds a 1 x 1 output with 1.
  void backward(Var scalar_output);

  // Building blocks for operations.
  Var push(Matrix value, bool needs_grad, BackwardFn backward);
  Matrix& grad_acc(std::size_t id);

 private:
  struct Node {
    Matrix value;
    const Matrix* ref = nullptr;  // external value (parameters)
    Matrix grad;
    Matrix* grad_target = nullptr;  // external accumulator (tracked parameters)
    bool needs_grad = false;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  double nearest_kink_ = std::numeric_limits<double>::infinity();
};

// Operations. All operands must live on the same tape.
Var linear(Var x, Var weight, Var bias);  // x W^T + b, b broadcast over rows
Var matmul_nt(Var x, Var weight);         // x W^T
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);  // element-wise
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var sigmoid(Var a);
Var tanh(Var a);
Var relu(Var a);
Var exp(Var a);
Var square(Var a);
Var clamp(Var a, double lo, double hi);
Var minimum(Var a, Var b);
Var concat_cols(Var a, Var b);
Var slice_cols(Var a, std::size_t begin, std::size_t count);
Var sum_cols(Var a);  // rows x 1
Var mean(Var a);      // 1 x 1
/// log(1 - tanh(u)^2), evaluated stably.
Var log_one_minus_tanh_sq(Var u);

}  // namespace platoon
