#include <iostream>

#include "motor/cli.hpp"

int main(int argc, char** argv) {
  return motor::cli::run(argc, argv, std::cout, std::cerr);
}
