#pragma once

#include <cstdio>
#include <mutex>
#include <set>
#include <string>

// Minimal stderr logger. Deliberately not a logging framework: bench workers
// are forked processes, so the sink must be fork-safe (plain stderr writes).
namespace healer::log {

enum class Level { DEBUG = 0, INFO = 1, WARN = 2, ERROR = 3 };

inline Level& threshold() {
    static Level lvl = Level::WARN;
    return lvl;
}

inline void set_level(Level lvl) { threshold() = lvl; }

inline void write(Level lvl, const std::string& msg) {
    if (lvl < threshold()) return;
    static const char* names[] = {"debug", "info", "warn", "error"};
    std::fprintf(stderr, "healer: %s: %s\n", names[static_cast<int>(lvl)],
                 msg.c_str());
}

inline void debug(const std::string& msg) { write(Level::DEBUG, msg); }
inline void info(const std::string& msg) { write(Level::INFO, msg); }
inline void warn(const std::string& msg) { write(Level::WARN, msg); }
inline void error(const std::string& msg) { write(Level::ERROR, msg); }

// Emits once per distinct key for the process lifetime.
inline void warn_once(const std::string& key, const std::string& msg) {
    static std::mutex mu;
    static std::set<std::string> seen;
    {
        std::lock_guard<std::mutex> lock(mu);
        if (!seen.insert(key).second) return;
    }
    write(Level::WARN, msg);
}

}  // namespace healer::log
