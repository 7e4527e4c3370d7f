#pragma once

#include <iosfwd>

namespace sttk {

// Entry point of the `sttk` tool. Returns 0 on success, 2 on a usage error
// and 1 on any other failure (after one diagnostic line on `err`).
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sttk
