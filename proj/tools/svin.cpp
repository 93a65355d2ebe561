#include "svin/cli.hpp"

int main(int argc, char** argv) {
  return svin::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
