#include <string>
#include <vector>

#include "edemajoint/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return edemajoint::cli::run(args);
}
