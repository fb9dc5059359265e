#include <iostream>
#include <string>
#include <vector>

#include "rdm/commands.hpp"

int main(int argc, char** argv) {
  return rdm::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
