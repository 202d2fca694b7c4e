#include <iostream>

#include "kilnnet/cli.hpp"

int main(int argc, char** argv) {
  return kiln::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
