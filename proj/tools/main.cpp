#include <iostream>

#include "adlj_cli/commands.hpp"

int main(int argc, char** argv) { return adlj::cli::run(argc, argv, std::cout, std::cerr); }
