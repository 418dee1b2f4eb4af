#include <string>
#include <vector>

#include "convreg/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return convreg::run_cli(args);
}
