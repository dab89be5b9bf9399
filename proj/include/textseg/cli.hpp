#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace textseg {

/// Runs one `textseg` subcommand. `args` excludes the program name.
/// Returns 0 on success, 1 on usage errors (usage text on `err`), 2 on
/// runtime errors.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace textseg
