// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "di2/cli.hpp"

int main(int argc, char** argv) {
    return di2::dispatch(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
