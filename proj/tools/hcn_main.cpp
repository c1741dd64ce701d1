#include <string>
#include <vector>

#include "hcn/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return hcn::cli::run(args);
}
