#include <cstdio>

#include "reassemble/geometry.hpp"

int main(int argc, char** argv) {
    (void)argc;
    (void)argv;
    std::puts("reassemble CLI placeholder");
    return 0;
}
