#pragma once

#include <string>

namespace hqnn::log {

enum class Level { error = 0, info = 1, debug = 2 };

/// Verbosity from HQNN_LOG (error|info|debug), read once; defaults to info.
Level level();

void error(const std::string& msg);
void info(const std::string& msg);
void debug(const std::string& msg);

} // namespace hqnn::log
