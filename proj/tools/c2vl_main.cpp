#include <string>
#include <vector>

#include "c2vl/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv, argv + argc);
    return c2vl::run_command(args);
}
