#include <iostream>

#include "densereg/cli.hpp"

int main(int argc, char** argv) { return densereg::cli::run(argc, argv, std::cout, std::cerr); }
