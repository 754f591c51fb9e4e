#ifndef LODSEG_CORE_LOG_HPP
#define LODSEG_CORE_LOG_HPP

#include <functional>
#include <iostream>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace lodseg::log {

enum class Level { debug = 0, info = 1, warning = 2, error = 3, quiet = 4 };

using Sink = std::function<void(Level, std::string_view)>;

namespace detail {
struct Registry {
  std::mutex mutex;
  Level threshold = Level::info;
  Sink sink;
};

inline Registry& registry() {
  static Registry r;
  return r;
}

inline const char* tag(Level level) {
  switch (level) {
    case Level::debug: return "debug";
    case Level::info: return "info";
    case Level::warning: return "warning";
    case Level::error: return "error";
    default: return "";
  }
}
}  // namespace detail

inline void set_level(Level level) {
  auto& r = detail::registry();
  std::lock_guard lock(r.mutex);
  r.threshold = level;
}

inline Level level() {
  auto& r = detail::registry();
  std::lock_guard lock(r.mutex);
  return r.threshold;
}

// Replaces the sink; returns the previous one. An empty sink means stderr.
inline Sink set_sink(Sink sink) {
  auto& r = detail::registry();
  std::lock_guard lock(r.mutex);
  return std::exchange(r.sink, std::move(sink));
}

inline void write(Level level, std::string_view message) {
  auto& r = detail::registry();
  std::lock_guard lock(r.mutex);
  if (level < r.threshold) return;
  if (r.sink) {
    r.sink(level, message);
  } else {
    std::cerr << "[lodseg " << detail::tag(level) << "] " << message << '\n';
  }
}

inline void debug(std::string_view m) { write(Level::debug, m); }
inline void info(std::string_view m) { write(Level::info, m); }
inline void warn(std::string_view m) { write(Level::warning, m); }
inline void error(std::string_view m) { write(Level::error, m); }

// Collects warnings for the lifetime of the object (tests, CLI summaries).
class ScopedCapture {
 public:
  ScopedCapture() {
    previous_ = set_sink([this](Level l, std::string_view m) {
      if (l >= Level::warning) messages_.emplace_back(m);
    });
  }
  ~ScopedCapture() { set_sink(std::move(previous_)); }
  ScopedCapture(const ScopedCapture&) = delete;
  ScopedCapture& operator=(const ScopedCapture&) = delete;

  const std::vector<std::string>& messages() const { return messages_; }

 private:
  Sink previous_;
  std::vector<std::string> messages_;
};

}  // namespace lodseg::log

#endif  // LODSEG_CORE_LOG_HPP
