#include <string>
#include <vector>

#include "prefixguard/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return prefixguard::run_cli(args);
}
