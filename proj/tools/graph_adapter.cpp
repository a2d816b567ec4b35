#include <iostream>
#include <string>
#include <vector>

#include "graph_adapter/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return graph_adapter::cli::run(args, std::cout, std::cerr);
}
