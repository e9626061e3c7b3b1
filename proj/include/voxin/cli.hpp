#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vx {

// Command-line front end of the toolkit.  `args` holds the arguments without
// the program name, exactly as main() would receive them.  All human and
// machine output goes to `out`, diagnostics to `err`.
//
// Exit codes: 0 success, 1 usage or parse error, 2 infeasible request
// (no admissible plan, or a memory cap exceeded while running one).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vx
