#include <iostream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "dpt/numerics/array.hpp"

int main(int argc, char** argv) {
  dpt::configure_allocator();
  const std::vector<std::string> args(argv + 1, argv + argc);
  return dpt::cli::dispatch(args, std::cout, std::cerr);
}
