#include <iostream>
#include <string>
#include <vector>

#include "vtonsift/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return vtonsift::run_cli(args, std::cout, std::cerr);
}
