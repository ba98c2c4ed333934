#include "hqnn/log.hpp"

#include <cstdlib>
#include <iostream>

namespace hqnn::log {

Level level() {
    static const Level lv = [] {
        const char* env = std::getenv("HQNN_LOG");
        if (!env) return Level::info;
        const std::string s(env);
        if (s == "error") return Level::error;
        if (s == "debug") return Level::debug;
        if (s == "info") return Level::info;
        std::cerr << "[hqnn] ignoring unknown HQNN_LOG value '" << s
                  << "' (expected error|info|debug)\n";
        return Level::info;
    }();
    return lv;
}

namespace {
void emit(Level at, const char* tag, const std::string& msg) {
    if (static_cast<int>(level()) >= static_cast<int>(at))
        std::cerr << "[hqnn " << tag << "] " << msg << std::endl;
}
} // namespace

void error(const std::string& msg) { emit(Level::error, "error", msg); }
void info(const std::string& msg) { emit(Level::info, "info", msg); }
void debug(const std::string& msg) { emit(Level::debug, "debug", msg); }

} // namespace hqnn::log
