#include <iostream>

#include "msnmt/cli.hpp"

int main(int argc, char** argv) {
  return msnmt::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
