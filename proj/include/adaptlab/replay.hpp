#pragma once

#include <stdexcept>
#include <vector>

#include "adaptlab/autodiff.hpp"
#include "adaptlab/rng.hpp"

namespace adaptlab {

struct RewardedTransition {
  VectorXd obs;
  VectorXd action;
  double reward = 0.0;
  VectorXd next_obs;
  bool done = false;
};

// adaptation-side transitions carry no reward field at all, so no adaptation
// code path can read one
struct RewardFreeTransition {
  VectorXd obs;
  VectorXd action;
  VectorXd next_obs;
};

// FIFO ring with uniform without-replacement batch sampling
template <typename T>
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity) : capacity_(capacity) {
    if (capacity <= 0)
      throw std::invalid_argument("replay buffer: capacity must be positive");
    items_.reserve(size_t(capacity));
  }

  void push(T t) {
    if (int(items_.size()) < capacity_) {
      items_.push_back(std::move(t));
    } else {
      items_[size_t(write_)] = std::move(t);
    }
    write_ = (write_ + 1) % capacity_;
  }

  int size() const { return int(items_.size()); }
  const T& at(int i) const { return items_[size_t(i)]; }
  // most recently pushed entry
  const T& newest() const {
    if (items_.empty()) throw std::logic_error("replay buffer: empty");
    const int last = (write_ + capacity_ - 1) % capacity_;
    return items_[size_t(int(items_.size()) < capacity_ ? int(items_.size()) - 1
                                                        : last)];
  }

  // uniform sample of distinct indices via a partial shuffle
  std::vector<const T*> sample(int batch, Rng& rng) const {
    if (batch <= 0 || batch > int(items_.size()))
      throw std::invalid_argument("replay buffer: bad batch size");
    if (int(scratch_.size()) != int(items_.size())) {
      scratch_.resize(items_.size());
      for (size_t i = 0; i < scratch_.size(); ++i) scratch_[i] = int(i);
    }
    std::vector<const T*> out(static_cast<size_t>(batch));
    const int n = int(scratch_.size());
    for (int i = 0; i < batch; ++i) {
      const int j = i + rng.below(n - i);
      std::swap(scratch_[size_t(i)], scratch_[size_t(j)]);
      out[size_t(i)] = &items_[size_t(scratch_[size_t(i)])];
    }
    return out;
  }

 private:
  int capacity_;
  int write_ = 0;
  std::vector<T> items_;
  mutable std::vector<int> scratch_;
};

struct RewardedBatch {
  MatrixXd obs, action, next_obs;
  VectorXd reward, done;
};

inline RewardedBatch to_batch(const std::vector<const RewardedTransition*>& b) {
  if (b.empty()) throw std::invalid_argument("to_batch: empty batch");
  const Eigen::Index n = Eigen::Index(b.size());
  RewardedBatch out;
  out.obs.resize(n, b[0]->obs.size());
  out.action.resize(n, b[0]->action.size());
  out.next_obs.resize(n, b[0]->next_obs.size());
  out.reward.resize(n);
  out.done.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.obs.row(i) = b[size_t(i)]->obs.transpose();
    out.action.row(i) = b[size_t(i)]->action.transpose();
    out.next_obs.row(i) = b[size_t(i)]->next_obs.transpose();
    out.reward(i) = b[size_t(i)]->reward;
    out.done(i) = b[size_t(i)]->done ? 1.0 : 0.0;
  }
  return out;
}

struct RewardFreeBatch {
  MatrixXd obs, action, next_obs;
};

inline RewardFreeBatch to_batch(
    const std::vector<const RewardFreeTransition*>& b) {
  if (b.empty()) throw std::invalid_argument("to_batch: empty batch");
  const Eigen::Index n = Eigen::Index(b.size());
  RewardFreeBatch out;
  out.obs.resize(n, b[0]->obs.size());
  out.action.resize(n, b[0]->action.size());
  out.next_obs.resize(n, b[0]->next_obs.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    out.obs.row(i) = b[size_t(i)]->obs.transpose();
    out.action.row(i) = b[size_t(i)]->action.transpose();
    out.next_obs.row(i) = b[size_t(i)]->next_obs.transpose();
  }
  return out;
}

}  // namespace adaptlab
