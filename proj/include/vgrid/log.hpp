#pragma once

#include <cstdlib>
#include <iostream>
#include <string>

namespace vgrid {

enum class LogLevel { quiet = 0, info = 1, debug = 2 };

/// Level comes from VOLTGRID_LOG (quiet|info|debug), default info.
inline LogLevel log_level() {
  static const LogLevel level = [] {
    const char* env = std::getenv("VOLTGRID_LOG");
    if (!env) return LogLevel::info;
    const std::string s(env);
    if (s == "quiet") return LogLevel::quiet;
    if (s == "debug") return LogLevel::debug;
    return LogLevel::info;
  }();
  return level;
}

inline void log_info(const std::string& msg) {
  if (log_level() >= LogLevel::info) std::cerr << "[voltgrid] " << msg << "\n";
}

inline void log_debug(const std::string& msg) {
  if (log_level() >= LogLevel::debug)
    std::cerr << "[voltgrid:debug] " << msg << "\n";
}

}  // namespace vgrid
