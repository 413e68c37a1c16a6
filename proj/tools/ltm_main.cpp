#include <iostream>

#include "ltm/cli.hpp"

int main(int argc, char** argv) { return ltm::run_cli(argc, argv, std::cout, std::cerr); }
