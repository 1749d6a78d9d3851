#pragma once

#include <atomic>
#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <utility>

namespace msret::log {

enum class Level { quiet = 0, warning = 1, info = 2 };

namespace detail {
inline std::atomic<int> g_level{static_cast<int>(Level::warning)};
inline std::mutex g_mutex;
inline std::function<void(Level, const std::string&)> g_sink;
}  // namespace detail

inline void set_level(Level level) { detail::g_level = static_cast<int>(level); }
inline Level level() { return static_cast<Level>(detail::g_level.load()); }

/// Replaces the default stderr sink. Passing an empty function restores it.
inline void set_sink(std::function<void(Level, const std::string&)> sink) {
  std::lock_guard lock(detail::g_mutex);
  detail::g_sink = std::move(sink);
}

inline void emit(Level lvl, const std::string& msg) {
  std::lock_guard lock(detail::g_mutex);
  if (detail::g_sink) {
    detail::g_sink(lvl, msg);
    return;
  }
  if (static_cast<int>(lvl) > detail::g_level.load()) return;
  std::cerr << (lvl == Level::warning ? "warning: " : "") << msg << '\n';
}

inline void warn(const std::string& msg) { emit(Level::warning, msg); }
inline void info(const std::string& msg) { emit(Level::info, msg); }

}  // namespace msret::log
