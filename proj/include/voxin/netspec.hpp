#pragma once

#include <stdexcept>
#include <string>

#include "voxin/network.hpp"

namespace vx {

// Diagnostic for a malformed network file, carrying the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(i64 line, const std::string& message)
      : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}

  i64 line() const { return line_; }

 private:
  i64 line_;
};

// Parses the line-oriented network grammar:
//
//   input <f0>
//   conv <f_out> <k> [relu]        (one extent for a cubic kernel)
//   conv <f_out> <kx> <ky> <kz> [relu]
//   pool <p> [mpf|plain|auto]      (one extent for a cubic window)
//   pool <px> <py> <pz> [mpf|plain|auto]
//
// '#' starts a comment; blank lines are skipped.  A pool without a mode token
// (or marked `auto`) leaves the fragment/plain choice to the planner.
NetworkSpec parse_network_spec(const std::string& text);

// Renders a network in the same grammar.  parse(format(net)) reproduces the
// network exactly.
std::string format_network_spec(const NetworkSpec& net);

}  // namespace vx
