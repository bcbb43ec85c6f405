#include <iostream>

#include "sketchhash/cli.hpp"

int main(int argc, char** argv) { return sketchhash::run_cli(argc, argv, std::cout, std::cerr); }
