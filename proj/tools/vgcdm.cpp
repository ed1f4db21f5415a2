#include <iostream>
#include <string>
#include <vector>

#include "vgcdm/cli.hpp"

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  return vgcdm::cli::run(args, std::cout, std::cerr);
}
