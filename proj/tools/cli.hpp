#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace counselflow::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// Entry point shared by the binary and the tests. `in` feeds interactive
// sessions.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace counselflow::cli
