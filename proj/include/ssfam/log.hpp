#pragma once

#include <cstdlib>
#include <iostream>
#include <string>
#include <string_view>

namespace ssfam::log {

enum class Level { quiet = 0, info = 1, debug = 2 };

/// Verbosity from SSFAM_VERBOSITY: 0/quiet, 1/info (default), 2/debug.
inline Level level() {
    const char* env = std::getenv("SSFAM_VERBOSITY");
    if (env == nullptr) return Level::info;
    const std::string_view v(env);
    if (v == "0" || v == "quiet") return Level::quiet;
    if (v == "2" || v == "debug") return Level::debug;
    return Level::info;
}

inline void info(const std::string& msg) {
    if (level() >= Level::info) std::cerr << msg << '\n';
}

inline void debug(const std::string& msg) {
    if (level() >= Level::debug) std::cerr << "[debug] " << msg << '\n';
}

inline void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

}  // namespace ssfam::log
