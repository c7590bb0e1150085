#include "codistill/common.hpp"

#include <charconv>
#include <cstdlib>
#include <thread>

namespace codistill {

std::string format_double(double value) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

int thread_cap() {
  static const int cap = [] {
    const char* env = std::getenv("CODISTILL_THREADS");
    if (env == nullptr) return 1;
    char* end = nullptr;
    long v = std::strtol(env, &end, 10);
    if (end == env || v < 1) return 1;
    return static_cast<int>(v);
  }();
  return cap;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
  const std::size_t lanes =
      std::min<std::size_t>(static_cast<std::size_t>(thread_cap()), n);
  if (lanes <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(lanes);
  for (std::size_t lane = 0; lane < lanes; ++lane) {
    threads.emplace_back([&, lane] {
      for (std::size_t i = lane; i < n; i += lanes) fn(i);
    });
  }
  for (auto& t : threads) t.join();
}

}  // namespace codistill
