#include "platoon/replay_buffer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "platoon/errors.hpp"

namespace platoon {

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw InvalidArgument("replay buffer capacity must be >= 1");
  storage_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(Transition t) {
  if (t.obs.empty() || t.obs.size() != t.next_obs.size()) {
    throw ShapeError("transition observation sizes disagree");
  }
  for (double a : t.action) {
    if (!(a >= -1.0 && a <= 1.0)) throw InvalidArgument("transition action outside [-1, 1]");
  }
  if (size_ > 0 && (t.obs.size() != storage_[0].obs.size() ||
                    t.action.size() != storage_[0].action.size() ||
                    t.h_actor.size() != storage_[0].h_actor.size())) {
    throw ShapeError("transition shape differs from stored transitions");
  }
  if (storage_.size() < capacity_) {
    storage_.push_back(std::move(t));
  } else {
    storage_[cursor_] = std::move(t);
  }
  cursor_ = (cursor_ + 1) % capacity_;
  size_ = std::min(size_ + 1, capacity_);
}

Batch ReplayBuffer::sample(std::size_t batch_size, Rng& rng) const {
  if (batch_size == 0) throw InvalidArgument("batch size must be >= 1");
  if (size_ < batch_size) {
    throw StateError("replay buffer holds " + std::to_string(size_) +
                     " transitions, fewer than the batch size " + std::to_string(batch_size));
  }
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = pick(rng);
  return gather(idx);
}

namespace {

Matrix stack(const std::vector<const std::vector<double>*>& rows) {
  const std::size_t cols = rows.front()->size();
  Matrix m(rows.size(), cols);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    std::copy(rows[r]->begin(), rows[r]->end(), m.row(r).begin());
  }
  return m;
}

}  // namespace

Batch ReplayBuffer::gather(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw InvalidArgument("gather: no indices");
  const std::size_t n = indices.size();
  std::vector<const Transition*> ts;
  for (std::size_t i : indices) {
    if (i >= size_) throw InvalidArgument("gather: index out of range");
    ts.push_back(&storage_[i]);
  }
  auto col = [&](auto member) {
    std::vector<const std::vector<double>*> rows;
    for (const Transition* t : ts) rows.push_back(&(t->*member));
    return stack(rows);
  };
  Batch b;
  b.obs = col(&Transition::obs);
  b.action = col(&Transition::action);
  b.next_obs = col(&Transition::next_obs);
  b.reward = Matrix(n, 1);
  b.done = Matrix(n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    b.reward(r, 0) = ts[r]->reward;
    b.done(r, 0) = ts[r]->done ? 1.0 : 0.0;
  }
  if (!ts.front()->h_actor.empty()) {
    b.hidden = {col(&Transition::h_actor), col(&Transition::h_q1), col(&Transition::h_q2)};
    b.next_hidden = {col(&Transition::next_h_actor), col(&Transition::next_h_q1),
                     col(&Transition::next_h_q2)};
  }
  return b;
}

}  // namespace platoon
