#include <iostream>
#include <string>
#include <vector>

#include "xnet/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return xnet::run_cli(args, std::cout, std::cerr);
}
