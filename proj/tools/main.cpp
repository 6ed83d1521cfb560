#include <string>
#include <vector>

#include "tinyadapt/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return tinyadapt::dispatch(args);
}
