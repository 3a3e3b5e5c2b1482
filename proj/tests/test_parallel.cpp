#include "lapsim/parallel.hpp"

#include <gtest/gtest.h>

#include <atomic>
#include <numeric>
#include <vector>

using namespace lapsim;

TEST(ThreadPool, ParallelForCoversRangeOnce) {
  ThreadPool pool(4);
  std::vector<std::atomic<int>> hits(1000);
  pool.parallel_for(hits.size(), 7, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) hits[i].fetch_add(1);
  });
  for (const auto& h : hits) EXPECT_EQ(h.load(), 1);
}

TEST(ThreadPool, SingleThreadInline) {
  ThreadPool pool(1);
  EXPECT_EQ(pool.thread_count(), 1u);
  std::vector<int> hits(100, 0);
  pool.parallel_for(hits.size(), 16, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) ++hits[i];
  });
  EXPECT_EQ(std::accumulate(hits.begin(), hits.end(), 0), 100);
}

TEST(ThreadPool, EmptyRange) {
  ThreadPool pool(3);
  bool called = false;
  pool.parallel_for(0, 1, [&](std::size_t, std::size_t) { called = true; });
  EXPECT_FALSE(called);
}

TEST(ThreadPool, ColoredGroupsRunInOrder) {
  // Writes within one color may interleave, but all of color k must land
  // before any of color k+1. Verify with a per-element stamp of the max
  // color seen so far.
  ThreadPool pool(4);
  std::vector<std::pair<std::size_t, std::size_t>> groups = {{0, 100}, {100, 150}, {150, 400}};
  std::atomic<int> current_color{0};
  std::vector<int> color_of(400);
  for (std::size_t i = 0; i < 400; ++i) color_of[i] = i < 100 ? 0 : (i < 150 ? 1 : 2);
  std::atomic<bool> order_ok{true};
  std::atomic<int> done_in_color[3] = {{0}, {0}, {0}};
  pool.parallel_colored(groups, [&](std::size_t i) {
    const int c = color_of[i];
    // all earlier colors must be fully finished
    for (int e = 0; e < c; ++e)
      if (done_in_color[e].load() != (e == 0 ? 100 : 50)) order_ok = false;
    done_in_color[c].fetch_add(1);
  });
  EXPECT_TRUE(order_ok.load());
  EXPECT_EQ(done_in_color[0].load(), 100);
  EXPECT_EQ(done_in_color[1].load(), 50);
  EXPECT_EQ(done_in_color[2].load(), 250);
}

TEST(ThreadPool, ReusableAcrossCalls) {
  ThreadPool pool(2);
  for (int round = 0; round < 50; ++round) {
    std::atomic<long> sum{0};
    pool.parallel_for(100, 3, [&](std::size_t begin, std::size_t end) {
      long local = 0;
      for (std::size_t i = begin; i < end; ++i) local += static_cast<long>(i);
      sum.fetch_add(local);
    });
    EXPECT_EQ(sum.load(), 4950);
  }
}
