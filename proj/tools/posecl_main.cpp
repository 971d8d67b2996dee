#include <iostream>
#include <string>
#include <vector>

#include "posecl/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return posecl::cli::run(args, std::cout, std::cerr);
}
