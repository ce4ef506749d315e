#include <iostream>
#include <string>
#include <vector>

#include "prodretrieve/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  prodretrieve::cli::Context ctx{prodretrieve::cli::current_executable(), &std::cout, &std::cerr};
  return prodretrieve::cli::run(args, ctx);
}
