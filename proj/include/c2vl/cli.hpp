#pragma once

#include <string>
#include <vector>

namespace c2vl {

// Full argv (program name included). Returns the process exit status:
// 0 success, 1 runtime failure, 2 usage/config/schema violation.
int run_command(const std::vector<std::string>& argv);

}  // namespace c2vl
