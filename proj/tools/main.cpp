#include <malloc.h>

#include "pstyle/cli.hpp"

int main(int argc, char** argv) {
    // Keep large activation buffers on the heap instead of mmap/munmap per layer.
    mallopt(M_MMAP_THRESHOLD, 32 << 20);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
    mallopt(M_TOP_PAD, 256 << 20);
    return pstyle::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
