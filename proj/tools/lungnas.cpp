#include <iostream>
#include <string>
#include <vector>

#include "lungnas/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return lungnas::cli::dispatch(args, std::cout, std::cerr);
}
