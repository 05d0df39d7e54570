#include <iostream>

#include "segattack/cli.hpp"

int main(int argc, char** argv) { return segattack::cli::run(argc, argv, std::cout, std::cerr); }
