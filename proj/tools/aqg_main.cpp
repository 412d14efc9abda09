#include <iostream>

#include "aqg/cli.hpp"

int main(int argc, char** argv) { return aqg::run_cli(argc, argv, std::cout, std::cerr); }
