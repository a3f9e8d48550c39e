#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <string_view>

namespace bronchograde::log {

enum class Level { debug, info, warn, error };

using Sink = std::function<void(Level, std::string_view)>;

/// Replaces the process-wide sink and returns the previous one.
/// The default sink writes warnings and errors to stderr, info to stdout.
Sink set_sink(Sink sink);

/// Messages below this level are dropped before reaching the sink.
void set_level(Level level);

void write(Level level, std::string_view message);

namespace detail {
template <typename... Args>
std::string concat(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}
}  // namespace detail

template <typename... Args>
void debug(const Args&... args) { write(Level::debug, detail::concat(args...)); }
template <typename... Args>
void info(const Args&... args) { write(Level::info, detail::concat(args...)); }
template <typename... Args>
void warn(const Args&... args) { write(Level::warn, detail::concat(args...)); }
template <typename... Args>
void error(const Args&... args) { write(Level::error, detail::concat(args...)); }

/// Collects every message written while alive; restores the previous sink on destruction.
class Capture {
 public:
  Capture();
  ~Capture();
  Capture(const Capture&) = delete;
  Capture& operator=(const Capture&) = delete;

  int warnings() const { return warnings_; }
  const std::string& text() const { return text_; }
  bool contains(std::string_view needle) const { return text_.find(needle) != std::string::npos; }

 private:
  Sink previous_;
  int warnings_ = 0;
  std::string text_;
};

}  // namespace bronchograde::log
