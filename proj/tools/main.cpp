#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) { return docpool::cli::run(argc, argv, std::cout, std::cerr); }
