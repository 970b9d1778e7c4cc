#include "todrr/parallel.hpp"

#include <atomic>

namespace todrr {
namespace {
std::atomic<std::size_t> g_max_threads{1};
}

void set_max_threads(std::size_t n) { g_max_threads = n == 0 ? 1 : n; }
std::size_t max_threads() { return g_max_threads; }

}  // namespace todrr
