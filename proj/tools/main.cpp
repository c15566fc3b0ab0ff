#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) { return ivq::cli::run(argc, argv, std::cout, std::cerr); }
