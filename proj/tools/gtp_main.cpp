#include <iostream>

#include "gtp/cli.hpp"

int main(int argc, char** argv) { return gtp::run_cli(argc, argv, std::cout, std::cerr); }
