#pragma once

#include <iostream>
#include <string>
#include <vector>

namespace hcn::cli {

// Exit codes: 0 success, 1 usage or contract error, 2 I/O error.
int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr);

}  // namespace hcn::cli
