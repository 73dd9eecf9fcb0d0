#pragma once

#include <cstddef>
#include <vector>

#include "platoon/random.hpp"
#include "platoon/sac.hpp"

namespace platoon {

struct Transition {
  std::vector<double> obs;
  std::vector<double> action;  // post-squash, entries in [-1, 1]
  double reward = 0.0;
  std::vector<double> next_obs;
  bool done = false;  // true terminal only; horizon timeouts still bootstrap
  // Hidden states at decision time (actor, q1, q2) and after it.
  std::vector<double> h_actor, h_q1, h_q2;
  std::vector<double> next_h_actor, next_h_q1, next_h_q2;
};

/// Fixed-capacity ring of transitions; the oldest entry is overwritten first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 10000);

  void push(Transition t);
  /// Uniform sample with replacement. Throws StateError when fewer than
  /// `batch_size` transitions are stored.
  Batch sample(std::size_t batch_size, Rng& rng) const;
  Batch gather(const std::vector<std::size_t>& indices) const;

  std::size_t size() const { return size_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t cursor() const { return cursor_; }
  const Transition& at(std::size_t i) const { return storage_.at(i); }

 private:
  std::size_t capacity_;
  std::size_t cursor_ = 0;
  std::size_t size_ = 0;
  std::vector<Transition> storage_;
};

}  // namespace platoon
