#include <iostream>

#include "instruct_icl/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return instruct_icl::cli::run_cli(args, std::cout, std::cerr);
}
