#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace splitleak {

/// Calls fn(i) for every i in [begin, end) on up to `threads` workers. After
/// all calls finish, rethrows the exception of the lowest failing index.
template <class Fn>
void parallel_for(std::size_t begin, std::size_t end, unsigned threads, Fn&& fn) {
  if (begin >= end) return;
  std::vector<std::exception_ptr> errors(end - begin);
  auto guarded = [&](std::size_t i) {
    try {
      fn(i);
    } catch (...) {
      errors[i - begin] = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(std::max(1u, threads), end - begin);
  if (workers == 1) {
    for (std::size_t i = begin; i < end; ++i) guarded(i);
  } else {
    std::atomic<std::size_t> next{begin};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < end;) guarded(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace splitleak
