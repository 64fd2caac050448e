#include <iostream>

#include "sroi/cli.hpp"

int main(int argc, char** argv) {
    return sroi::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
