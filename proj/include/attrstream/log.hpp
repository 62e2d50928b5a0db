#pragma once

#include <iostream>
#include <sstream>
#include <string>

namespace attrstream::log {

enum class Level { debug = 0, info = 1, warn = 2, error = 3, off = 4 };

Level threshold();
void set_threshold(Level level);
void write(Level level, const std::string& message);

template <typename... Args>
void warn(const Args&... args) {
  if (threshold() > Level::warn) return;
  std::ostringstream os;
  (os << ... << args);
  write(Level::warn, os.str());
}

template <typename... Args>
void info(const Args&... args) {
  if (threshold() > Level::info) return;
  std::ostringstream os;
  (os << ... << args);
  write(Level::info, os.str());
}

}  // namespace attrstream::log
