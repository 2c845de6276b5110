#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace xmodal {

/// Entry point of the `xmodal` tool. `args` excludes the program name.
/// Returns 0 on success, 2 on usage errors, 1 on any other failure (after
/// printing "error[<kind>]: <message>" to `err`).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace xmodal
