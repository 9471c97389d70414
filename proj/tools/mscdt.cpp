#include <iostream>

#include "mscdt/cli/cli.hpp"

int main(int argc, char** argv) {
  return mscdt::cli::dispatch(argc, argv, std::cout, std::cerr);
}
