#include "apseg/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace apseg {

namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::Warn)};
std::mutex g_mutex;

void emit(const char* tag, const std::string& msg) {
  std::lock_guard<std::mutex> lock(g_mutex);
  std::cerr << '[' << tag << "] " << msg << '\n';
}
}  // namespace

void set_log_level(LogLevel level) { g_level = static_cast<int>(level); }
LogLevel log_level() { return static_cast<LogLevel>(g_level.load()); }

void log_warn(const std::string& msg) {
  if (g_level >= static_cast<int>(LogLevel::Warn)) emit("warn", msg);
}

void log_info(const std::string& msg) {
  if (g_level >= static_cast<int>(LogLevel::Info)) emit("info", msg);
}

}  // namespace apseg
