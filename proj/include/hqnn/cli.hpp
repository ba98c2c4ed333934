#pragma once

namespace hqnn::cli {

/// Entry point behind main(): parses argv, dispatches the subcommand, and
/// maps failures to exit codes (0 ok, 1 runtime failure, 2 usage error).
int run(int argc, const char* const* argv);

} // namespace hqnn::cli
