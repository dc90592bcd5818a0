#include <iostream>

#include "specshare/cli.hpp"

int main(int argc, char** argv) { return specshare::dispatch(argc, argv, std::cout, std::cerr); }
