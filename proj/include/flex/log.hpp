#pragma once

#include <functional>
#include <string_view>

namespace flex::log {

enum class Level { info, warn, error };

using Sink = std::function<void(Level, std::string_view)>;

// Replaces the process-wide sink and returns the previous one. The default
// sink writes "[level] message" lines to stderr.
Sink set_sink(Sink sink);

void info(std::string_view message);
void warn(std::string_view message);
void error(std::string_view message);

}  // namespace flex::log
