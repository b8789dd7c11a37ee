#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace instruct_icl::cli {

// Exit codes shared by every subcommand.
inline constexpr int kExitOk = 0;
inline constexpr int kExitItemFailures = 1;
inline constexpr int kExitUsage = 2;

// Entry point behind the instruct-icl binary. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace instruct_icl::cli
