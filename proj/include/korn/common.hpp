#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace korn {

// Process-wide worker count for the pair-sum engines. Results never depend
// on it: work is split into a fixed number of chunks and partial sums are
// combined along a fixed pairwise tree, so any worker count produces the
// same bits.
int thread_count();
void set_thread_count(int n);

inline constexpr int kReductionChunks = 256;

// Splits [0, n) into `chunks` contiguous ranges, calls
// body(begin, end, partial) with a zeroed width-sized accumulator for each,
// and combines the per-chunk partials pairwise into out[0..width).
void chunked_reduce(std::size_t n, int width,
                    const std::function<void(std::size_t, std::size_t, double*)>& body,
                    double* out, int chunks = kReductionChunks);

// Runs body(begin, end) over the same fixed chunk grid without a reduction;
// chunks must write to disjoint state.
void parallel_for_chunks(std::size_t n,
                         const std::function<void(std::size_t, std::size_t)>& body,
                         int chunks = kReductionChunks);

[[noreturn]] inline void fail(const std::string& msg) {
  throw std::invalid_argument(msg);
}

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

}  // namespace korn
