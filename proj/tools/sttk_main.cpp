#include <iostream>

#include "sttk/cli.hpp"

int main(int argc, char** argv) { return sttk::run_cli(argc, argv, std::cout, std::cerr); }
