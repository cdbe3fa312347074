#include <iostream>

#include "fraclens/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return fraclens::cli::run(args, std::cout, std::cerr);
}
