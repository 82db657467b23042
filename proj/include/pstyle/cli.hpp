#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace pstyle {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Entry point of the `palette-styler` tool. `args` excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace pstyle
