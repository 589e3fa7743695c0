#include "korn/common.hpp"

#include <algorithm>
#include <atomic>
#include <thread>

namespace korn {

namespace {
std::atomic<int> g_threads{0};  // 0 = pick from hardware
}

int thread_count() {
  const int t = g_threads.load(std::memory_order_relaxed);
  if (t > 0) return t;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void set_thread_count(int n) {
  require(n >= 0, "set_thread_count: n must be >= 0");
  g_threads.store(n, std::memory_order_relaxed);
}

void chunked_reduce(std::size_t n, int width,
                    const std::function<void(std::size_t, std::size_t, double*)>& body,
                    double* out, int chunks) {
  require(width >= 1 && chunks >= 1, "chunked_reduce: bad width or chunk count");
  if (n == 0) {
    std::fill(out, out + width, 0.0);
    return;
  }
  const int nc = static_cast<int>(std::min<std::size_t>(chunks, n));
  std::vector<double> partial(static_cast<std::size_t>(nc) * width, 0.0);
  auto run_chunk = [&](int c) {
    const std::size_t b = n * c / nc;
    const std::size_t e = n * (c + 1) / nc;
    body(b, e, partial.data() + static_cast<std::size_t>(c) * width);
  };
  const int workers = std::min(thread_count(), nc);
  if (workers <= 1) {
    for (int c = 0; c < nc; ++c) run_chunk(c);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (int c = next.fetch_add(1); c < nc; c = next.fetch_add(1)) run_chunk(c);
      });
    }
    for (auto& t : pool) t.join();
  }
  // Pairwise tree over chunk index; the combine order is fixed regardless of
  // which worker produced which partial.
  for (int gap = 1; gap < nc; gap *= 2) {
    for (int i = 0; i + gap < nc; i += 2 * gap) {
      double* a = partial.data() + static_cast<std::size_t>(i) * width;
      const double* b = partial.data() + static_cast<std::size_t>(i + gap) * width;
      for (int k = 0; k < width; ++k) a[k] += b[k];
    }
  }
  std::copy(partial.data(), partial.data() + width, out);
}

void parallel_for_chunks(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& body,
                         int chunks) {
  require(chunks >= 1, "parallel_for_chunks: bad chunk count");
  if (n == 0) return;
  const int nc = static_cast<int>(std::min<std::size_t>(chunks, n));
  auto run_chunk = [&](int c) {
    body(n * c / nc, n * (c + 1) / nc);
  };
  const int workers = std::min(thread_count(), nc);
  if (workers <= 1) {
    for (int c = 0; c < nc; ++c) run_chunk(c);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (int c = next.fetch_add(1); c < nc; c = next.fetch_add(1)) run_chunk(c);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace korn
