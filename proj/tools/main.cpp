#include <iostream>
#include <string>
#include <vector>

#include "textseg/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return textseg::cli_dispatch(args, std::cout, std::cerr);
}
