#include <string>
#include <vector>

#include "padprobe/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return padprobe::cli::parse_and_dispatch(args);
}
