#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <thread>
#include <vector>

namespace mfdl::detail {

inline constexpr Eigen::Index kSampleBlock = 4096;

// Runs body(block_index, first_row, row_count) over fixed-size sample blocks.
template <typename Body>
void for_each_block(Eigen::Index n, int threads, Body body, Eigen::Index block = kSampleBlock) {
  const Eigen::Index blocks = (n + block - 1) / block;
  auto run = [&](Eigen::Index first_block, Eigen::Index stride) {
    for (Eigen::Index blk = first_block; blk < blocks; blk += stride) {
      const Eigen::Index start = blk * block;
      body(blk, start, std::min(block, n - start));
    }
  };
  if (threads <= 1 || blocks <= 1) {
    run(0, 1);
    return;
  }
  const int t = static_cast<int>(std::min<Eigen::Index>(threads, blocks));
  std::vector<std::thread> pool;
  for (int i = 0; i < t; ++i) pool.emplace_back(run, i, t);
  for (auto& th : pool) th.join();
}

}  // namespace mfdl::detail
