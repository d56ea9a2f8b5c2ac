#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "snam/error.hpp"
#include "snam/random.hpp"

namespace snam::data {

struct Fold {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Shuffles 0..n-1 with XorShift64(seed) (Fisher-Yates), then cuts the order
/// into k contiguous chunks; the first n % k chunks get one extra row. Index
/// lists within each fold are sorted.
inline std::vector<Fold> kfold_split(std::size_t n, std::size_t k = 5, std::uint64_t seed = 101, bool shuffle = true) {
  if (k < 2) throw Error(ErrorCode::invalid_config, "k-fold needs k >= 2");
  if (n < k) {
    throw Error(ErrorCode::too_few_rows, std::to_string(n) + " rows cannot be split into " + std::to_string(k) + " folds");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (shuffle) {
    XorShift64 rng(seed);
    rng.shuffle(order);
  }

  std::vector<std::size_t> fold_of(n);
  std::size_t start = 0;
  for (std::size_t f = 0; f < k; ++f) {
    const std::size_t size = n / k + (f < n % k ? 1 : 0);
    for (std::size_t i = start; i < start + size; ++i) fold_of[order[i]] = f;
    start += size;
  }

  std::vector<Fold> folds(k);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t f = 0; f < k; ++f) (f == fold_of[r] ? folds[f].test : folds[f].train).push_back(r);
  }
  return folds;
}

}  // namespace snam::data
