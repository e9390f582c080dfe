#include <iostream>

#include "mtgnn/cli.hpp"

int main(int argc, char** argv) { return mtgnn::run_cli(argc, argv, std::cout, std::cerr); }
