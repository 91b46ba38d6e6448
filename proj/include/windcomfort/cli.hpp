#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace wc {

// Exit codes: 0 success, 1 user error, 2 internal error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace wc
