#include <iostream>

#include "tunalab/cli.hpp"

int main(int argc, char** argv) { return tunalab::run_cli(argc, argv, std::cout, std::cerr); }
