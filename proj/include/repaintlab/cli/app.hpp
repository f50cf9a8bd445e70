#pragma once

#include <string>
#include <vector>

namespace repaintlab::cli {

/// Exit codes: 0 ok, 1 config or data error, 2 usage.
inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitUsage = 2;

/// Entry point of the `repaintlab` command. args[0] is the program name.
int run(const std::vector<std::string>& args);

}  // namespace repaintlab::cli
