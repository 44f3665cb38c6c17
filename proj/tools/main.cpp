#include <iostream>
#include <string>
#include <vector>

#include "t2m/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return t2m::run_cli(args, std::cout, std::cerr);
}
