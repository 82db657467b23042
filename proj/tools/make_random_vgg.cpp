// Writes a randomly initialized encoder container, for smoke runs when no
// converted VGG-19 weights are at hand.
#include <cstdlib>
#include <iostream>

#include "pstyle/encoder.hpp"

int main(int argc, char** argv) {
    if (argc < 2 || argc > 4) {
        std::cerr << "usage: make-random-vgg OUT.pstc [SEED] [rgb_unit|rgb_imagenet|bgr_caffe]\n";
        return 1;
    }
    try {
        const std::uint64_t seed = argc > 2 ? std::strtoull(argv[2], nullptr, 10) : 0;
        const std::string prep = argc > 3 ? argv[3] : "rgb_unit";
        pstyle::encoder_to_archive(pstyle::random_encoder(seed, prep)).save(argv[1]);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
