#pragma once

#include <iosfwd>

namespace homsurro::pipeline {

/// Runs the fast invariant suite (all modules) and prints one line per
/// check. Returns 0 when every check passes. Output is deterministic.
int run_selftest(std::ostream& out);

}  // namespace homsurro::pipeline
