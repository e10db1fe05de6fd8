#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "alsim/common.hpp"

namespace alsim {

/// Partition of a fixed pool into labeled and unlabeled items at one AL
/// iteration. Items are addressed by pool index; pools are sorted by document
/// id, so ascending index is ascending id.
///
/// Labels are revealed from the gold vector passed at construction (the
/// simulated oracle), which must outlive the state.
class PoolState {
 public:
  explicit PoolState(std::span<const Label> gold) : gold_(gold), revealed_(gold.size(), -1) {}

  std::size_t size() const { return gold_.size(); }
  std::size_t labeled_count() const { return order_.size(); }
  std::size_t unlabeled_count() const { return size() - labeled_count(); }
  std::size_t iteration() const { return batches_.size(); }

  bool is_labeled(std::size_t i) const { return revealed_.at(i) >= 0; }

  /// Revealed label of a labeled item.
  Label label(std::size_t i) const {
    if (!is_labeled(i)) throw std::out_of_range("item " + std::to_string(i) + " is unlabeled");
    return static_cast<Label>(revealed_[i]);
  }

  /// Labeled indices in acquisition order.
  const std::vector<std::size_t>& labeled() const { return order_; }

  /// Sizes of every revealed batch, seed first.
  const std::vector<std::size_t>& batch_sizes() const { return batches_; }

  std::vector<std::size_t> unlabeled() const {
    std::vector<std::size_t> out;
    out.reserve(unlabeled_count());
    for (std::size_t i = 0; i < size(); ++i)
      if (revealed_[i] < 0) out.push_back(i);
    return out;
  }

  std::size_t labeled_abuse_count() const { return abuse_; }

  /// Moves `indices` to the labeled set with their gold labels.
  void reveal(std::span<const std::size_t> indices) {
    if (indices.empty()) return;
    std::vector<std::size_t> sorted(indices.begin(), indices.end());
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw std::invalid_argument("duplicate index in reveal request");
    for (auto i : indices) {
      if (i >= size()) throw std::out_of_range("unknown pool index " + std::to_string(i));
      if (revealed_[i] >= 0)
        throw std::invalid_argument("pool index " + std::to_string(i) + " is already labeled");
    }
    for (auto i : indices) {
      revealed_[i] = gold_[i];
      abuse_ += gold_[i] == kAbuse;
      order_.push_back(i);
    }
    batches_.push_back(indices.size());
  }

 private:
  std::span<const Label> gold_;
  std::vector<std::int8_t> revealed_;
  std::vector<std::size_t> order_;
  std::vector<std::size_t> batches_;
  std::size_t abuse_ = 0;
};

inline PoolState reveal_labels(PoolState pool, std::span<const std::size_t> indices) {
  pool.reveal(indices);
  return pool;
}

}  // namespace alsim
