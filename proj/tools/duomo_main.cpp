#include <iostream>
#include <string>
#include <vector>

#include "duomo/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return duomo::cli::cli_dispatch(args, std::cout, std::cerr);
}
