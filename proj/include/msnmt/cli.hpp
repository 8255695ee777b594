#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace msnmt {

/// Entry point of the msnmt tool. `args` excludes the program name. Returns
/// the process exit status: 0 on success, nonzero when any error fired.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace msnmt
