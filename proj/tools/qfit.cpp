#include <iostream>

#include "qfit/cli.hpp"

int main(int argc, char** argv) { return qfit::cli::run(argc, argv, std::cout, std::cerr); }
