#pragma once

#include <algorithm>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

#include "gapmm/types.hpp"

namespace gapmm {

/// Worker cap for parallel_for; 0 means hardware concurrency.
void set_thread_count(int threads);
int thread_count();

/// Runs body(i) for i in [0, n) on up to thread_count() threads. Callers write
/// into per-index slots and reduce in index order afterwards, so results do
/// not depend on scheduling.
template <typename Body>
void parallel_for(Index n, Body&& body) {
  const int workers = static_cast<int>(std::min<Index>(thread_count(), n));
  if (workers <= 1) {
    for (Index i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  const Index chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const Index begin = w * chunk;
    const Index end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([begin, end, &body, &err = errors[w]] {
      try {
        for (Index i = begin; i < end; ++i) body(i);
      } catch (...) {
        err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace gapmm
