#pragma once

#include <iosfwd>

namespace svsl::cli {

/// Entry point shared by the `svsl` executable and the CLI tests.
/// Exit codes: 0 ok, 1 runtime failure, 2 invalid configuration/model/grid.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace svsl::cli
