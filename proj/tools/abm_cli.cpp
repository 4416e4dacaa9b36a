#include <iostream>

#include "abm/cli.hpp"

int main(int argc, char** argv) {
  return abm::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
