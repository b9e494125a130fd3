#include <iostream>
#include <string>
#include <vector>

#include "deepsitar/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return deepsitar::cli::run(args, std::cout, std::cerr);
}
