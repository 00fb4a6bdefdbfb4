#include <iostream>

#include "deepcoder/cli.hpp"

int main(int argc, char** argv) { return deepcoder::cli::run(argc, argv, std::cout, std::cerr); }
