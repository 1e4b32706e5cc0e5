#include <iostream>

#include "epigeo/cli.h"

int main(int argc, char** argv) { return epigeo::RunCli(argc, argv, std::cout, std::cerr); }
