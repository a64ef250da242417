#pragma once

#include <string>
#include <vector>

namespace scl {

// Exit codes: 0 success, 2 usage, 3 data/format, 4 numeric failure.
int run_cli(const std::vector<std::string>& args);

}  // namespace scl
