#include <iostream>
#include <string>
#include <vector>

#include "todrr/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return todrr::cli::run(args, std::cout, std::cerr);
}
