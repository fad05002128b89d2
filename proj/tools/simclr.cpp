#include "simclr/cli/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return simclr::cli::dispatch(argc, argv, std::cout, std::cerr); }
