#include <string>
#include <vector>

#include "linrel/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return linrel::run_cli(args);
}
