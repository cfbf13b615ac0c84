#include <iostream>

#include "mcnet/cli.hpp"

int main(int argc, char** argv) {
  return mcnet::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
