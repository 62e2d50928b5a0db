#include "attrstream/log.hpp"

#include <atomic>
#include <mutex>

namespace attrstream::log {

namespace {
std::atomic<Level> g_threshold{Level::info};
std::mutex g_mutex;

const char* name(Level level) {
  switch (level) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warn";
    case Level::error: return "error";
    case Level::off: break;
  }
  return "";
}
}  // namespace

Level threshold() { return g_threshold.load(std::memory_order_relaxed); }
void set_threshold(Level level) { g_threshold.store(level, std::memory_order_relaxed); }

void write(Level level, const std::string& message) {
  if (level < threshold()) return;
  std::lock_guard lock(g_mutex);
  std::cerr << "[" << name(level) << "] " << message << '\n';
}

}  // namespace attrstream::log
