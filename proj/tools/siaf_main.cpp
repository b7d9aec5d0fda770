// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "siaf/cli.hpp"

int main(int argc, char** argv) {
  siaf::cli::Harness h(std::cout, std::cerr);
  return h.main(std::vector<std::string>(argv + 1, argv + argc));
}
