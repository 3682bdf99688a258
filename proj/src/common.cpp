#include "morphtrack/common.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace morphtrack {

int thread_count() {
  const char* env = std::getenv("MORPHTRACK_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long value = std::strtol(env, &end, 10);
  if (end == env || value < 1) return 1;
  return static_cast<int>(std::min<long>(value, 256));
}

void parallel_chunks(int n, const std::function<void(int, int, int)>& fn, int workers) {
  if (n <= 0) return;
  if (workers <= 0) workers = thread_count();
  workers = std::min(workers, n);
  if (workers <= 1) {
    fn(0, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    const int begin = static_cast<int>(static_cast<long>(n) * w / workers);
    const int end = static_cast<int>(static_cast<long>(n) * (w + 1) / workers);
    pool.emplace_back([&fn, begin, end, w] { fn(begin, end, w); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace morphtrack
