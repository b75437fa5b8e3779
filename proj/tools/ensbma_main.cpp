#include <string>
#include <vector>

#include "ensbma/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return ensbma::cli::run(std::move(args));
}
