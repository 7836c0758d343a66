#include <iostream>

#include "ptadet/app.hpp"

int main(int argc, char** argv) {
  return ptadet::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
