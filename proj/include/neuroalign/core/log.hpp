#pragma once

#include <atomic>
#include <iostream>
#include <string>

namespace neuroalign {

enum class LogLevel { kQuiet = 0, kWarn = 1, kInfo = 2 };

inline std::atomic<int>& log_level_slot() {
  static std::atomic<int> level{static_cast<int>(LogLevel::kWarn)};
  return level;
}

inline void set_log_level(LogLevel l) { log_level_slot().store(static_cast<int>(l)); }

inline void log_warning(const std::string& msg) {
  if (log_level_slot().load() >= static_cast<int>(LogLevel::kWarn)) std::clog << "warning: " << msg << '\n';
}

inline void log_info(const std::string& msg) {
  if (log_level_slot().load() >= static_cast<int>(LogLevel::kInfo)) std::clog << msg << '\n';
}

}  // namespace neuroalign
