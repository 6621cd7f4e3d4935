#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <string_view>

namespace kws::log {

enum class Level { kError = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

// Verbosity comes from KWS_LOG (error|warn|info|debug or 0-3); default warn.
inline Level threshold() {
  static const Level level = [] {
    const char* env = std::getenv("KWS_LOG");
    if (env == nullptr) return Level::kWarn;
    const std::string_view v(env);
    if (v == "error" || v == "0") return Level::kError;
    if (v == "info" || v == "2") return Level::kInfo;
    if (v == "debug" || v == "3") return Level::kDebug;
    return Level::kWarn;
  }();
  return level;
}

inline void write(Level level, std::string_view msg) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  static std::mutex mu;
  static constexpr const char* kTags[] = {"E", "W", "I", "D"};
  std::lock_guard lock(mu);
  std::cerr << "[kws " << kTags[static_cast<int>(level)] << "] " << msg << '\n';
}

template <typename... Args>
void emit(Level level, const Args&... args) {
  if (static_cast<int>(level) > static_cast<int>(threshold())) return;
  std::ostringstream os;
  (os << ... << args);
  write(level, os.str());
}

template <typename... Args>
void error(const Args&... args) { emit(Level::kError, args...); }
template <typename... Args>
void warn(const Args&... args) { emit(Level::kWarn, args...); }
template <typename... Args>
void info(const Args&... args) { emit(Level::kInfo, args...); }
template <typename... Args>
void debug(const Args&... args) { emit(Level::kDebug, args...); }

}  // namespace kws::log
