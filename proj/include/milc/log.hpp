#pragma once

#include <cstdlib>
#include <iostream>
#include <sstream>
#include <string>

namespace milc::logging {

enum class Level { error = 0, info = 1, debug = 2 };

// Level comes from MILC_LOG={error|info|debug}; default info.
inline Level level() {
    static Level lv = [] {
        const char* e = std::getenv("MILC_LOG");
        if (!e) return Level::info;
        std::string s(e);
        if (s == "error") return Level::error;
        if (s == "debug") return Level::debug;
        return Level::info;
    }();
    return lv;
}

inline void emit(Level lv, const std::string& msg) {
    if (int(lv) <= int(level())) std::cerr << "[milc] " << msg << "\n";
}

inline void info(const std::string& msg) { emit(Level::info, msg); }
inline void debug(const std::string& msg) { emit(Level::debug, msg); }
inline void error(const std::string& msg) { emit(Level::error, msg); }

}  // namespace milc::logging
