#pragma once

#include <cstddef>
#include <vector>

#include "wkcl/rng.hpp"

namespace wkcl {

/// Draws indices 0..n-1 without replacement in shuffled passes. A batch never
/// straddles two passes: the last batch of a pass may be short, after which
/// the order is reshuffled.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, Rng rng) : n_(n), rng_(rng) {}

  std::size_t size() const { return n_; }
  std::size_t passes() const { return passes_; }

  std::vector<std::size_t> next(std::size_t batch) {
    std::vector<std::size_t> out;
    if (n_ == 0 || batch == 0) return out;
    if (cursor_ >= order_.size()) {
      order_ = rng_.permutation(n_);
      cursor_ = 0;
      ++passes_;
    }
    const std::size_t take = std::min(batch, order_.size() - cursor_);
    out.assign(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + take));
    cursor_ += take;
    return out;
  }

 private:
  std::size_t n_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t passes_ = 0;
};

}  // namespace wkcl
