#include "flex/log.hpp"

#include <cstdio>
#include <mutex>
#include <string>

namespace flex::log {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

void default_sink(Level level, std::string_view message) {
  const char* tag = level == Level::info ? "info" : level == Level::warn ? "warn" : "error";
  std::fprintf(stderr, "[%s] %.*s\n", tag, static_cast<int>(message.size()), message.data());
}

Sink& current() {
  static Sink sink = default_sink;
  return sink;
}

void emit(Level level, std::string_view message) {
  std::lock_guard lock(sink_mutex());
  current()(level, message);
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  Sink previous = std::move(current());
  current() = sink ? std::move(sink) : Sink(default_sink);
  return previous;
}

void info(std::string_view message) { emit(Level::info, message); }
void warn(std::string_view message) { emit(Level::warn, message); }
void error(std::string_view message) { emit(Level::error, message); }

}  // namespace flex::log
