#include "bronchograde/log.hpp"

#include <iostream>
#include <mutex>

namespace bronchograde::log {
namespace {

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

const char* tag(Level level) {
  switch (level) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warn: return "warning";
    case Level::error: return "error";
  }
  return "?";
}

void default_sink(Level level, std::string_view message) {
  auto& os = level >= Level::warn ? std::cerr : std::cout;
  os << "[" << tag(level) << "] " << message << '\n';
}

Sink& current_sink() {
  static Sink sink = default_sink;
  return sink;
}

Level& current_level() {
  static Level level = Level::info;
  return level;
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(sink_mutex());
  Sink previous = std::move(current_sink());
  current_sink() = sink ? std::move(sink) : Sink(default_sink);
  return previous;
}

void set_level(Level level) {
  std::lock_guard lock(sink_mutex());
  current_level() = level;
}

void write(Level level, std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (level < current_level()) return;
  current_sink()(level, message);
}

Capture::Capture() {
  previous_ = set_sink([this](Level level, std::string_view message) {
    if (level == Level::warn) ++warnings_;
    text_.append(message);
    text_.push_back('\n');
  });
}

Capture::~Capture() { set_sink(std::move(previous_)); }

}  // namespace bronchograde::log
