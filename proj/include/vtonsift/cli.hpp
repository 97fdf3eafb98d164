#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace vtonsift {

// Entry point of the `vtonsift` tool. args[0] is the program name.
// Returns 0 on success, 1 when a command or a sample failed, 2 on usage errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace vtonsift
