#include <doctest.h>

#include <algorithm>
#include <fstream>

#include "pstyle/errors.hpp"
#include "pstyle/imaging.hpp"
#include "support.hpp"

using namespace pstyle;
using testing::TempDir;

namespace {

// 4x3 solid (200, 30, 90) baseline JPEG.
const unsigned char kSolidJpeg[] = {0xff,0xd8,0xff,0xe0,0x00,0x10,0x4a,0x46,0x49,0x46,0x00,0x01,0x01,0x00,0x00,0x01,0x00,0x01,0x00,0x00,0xff,0xdb,0x00,0x43,0x00,0x02,0x01,0x01,0x01,0x01,0x01,0x02,0x01,0x01,0x01,0x02,0x02,0x02,0x02,0x02,0x04,0x03,0x02,0x02,0x02,0x02,0x05,0x04,0x04,0x03,0x04,0x06,0x05,0x06,0x06,0x06,0x05,0x06,0x06,0x06,0x07,0x09,0x08,0x06,0x07,0x09,0x07,0x06,0x06,0x08,0x0b,0x08,0x09,0x0a,0x0a,0x0a,0x0a,0x0a,0x06,0x08,0x0b,0x0c,0x0b,0x0a,0x0c,0x09,0x0a,0x0a,0x0a,0xff,0xdb,0x00,0x43,0x01,0x02,0x02,0x02,0x02,0x02,0x02,0x05,0x03,0x03,0x05,0x0a,0x07,0x06,0x07,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0x0a,0xff,0xc0,0x00,0x11,0x08,0x00,0x03,0x00,0x04,0x03,0x01,0x22,0x00,0x02,0x11,0x01,0x03,0x11,0x01,0xff,0xc4,0x00,0x1f,0x00,0x00,0x01,0x05,0x01,0x01,0x01,0x01,0x01,0x01,0x00,0x00,0x00,0x00,0x00,0x00,0x00,0x00,0x01,0x02,0x03,0x04,0x05,0x06,0x07,0x08,0x09,0x0a,0x0b,0xff,0xc4,0x00,0xb5,0x10,0x00,0x02,0x01,0x03,0x03,0x02,0x04,0x03,0x05,0x05,0x04,0x04,0x00,0x00,0x01,0x7d,0x01,0x02,0x03,0x00,0x04,0x11,0x05,0x12,0x21,0x31,0x41,0x06,0x13,0x51,0x61,0x07,0x22,0x71,0x14,0x32,0x81,0x91,0xa1,0x08,0x23,0x42,0xb1,0xc1,0x15,0x52,0xd1,0xf0,0x24,0x33,0x62,0x72,0x82,0x09,0x0a,0x16,0x17,0x18,0x19,0x1a,0x25,0x26,0x27,0x28,0x29,0x2a,0x34,0x35,0x36,0x37,0x38,0x39,0x3a,0x43,0x44,0x45,0x46,0x47,0x48,0x49,0x4a,0x53,0x54,0x55,0x56,0x57,0x58,0x59,0x5a,0x63,0x64,0x65,0x66,0x67,0x68,0x69,0x6a,0x73,0x74,0x75,0x76,0x77,0x78,0x79,0x7a,0x83,0x84,0x85,0x86,0x87,0x88,0x89,0x8a,0x92,0x93,0x94,0x95,0x96,0x97,0x98,0x99,0x9a,0xa2,0xa3,0xa4,0xa5,0xa6,0xa7,0xa8,0xa9,0xaa,0xb2,0xb3,0xb4,0xb5,0xb6,0xb7,0xb8,0xb9,0xba,0xc2,0xc3,0xc4,0xc5,0xc6,0xc7,0xc8,0xc9,0xca,0xd2,0xd3,0xd4,0xd5,0xd6,0xd7,0xd8,0xd9,0xda,0xe1,0xe2,0xe3,0xe4,0xe5,0xe6,0xe7,0xe8,0xe9,0xea,0xf1,0xf2,0xf3,0xf4,0xf5,0xf6,0xf7,0xf8,0xf9,0xfa,0xff,0xc4,0x00,0x1f,0x01,0x00,0x03,0x01,0x01,0x01,0x01,0x01,0x01,0x01,0x01,0x01,0x00,0x00,0x00,0x00,0x00,0x00,0x01,0x02,0x03,0x04,0x05,0x06,0x07,0x08,0x09,0x0a,0x0b,0xff,0xc4,0x00,0xb5,0x11,0x00,0x02,0x01,0x02,0x04,0x04,0x03,0x04,0x07,0x05,0x04,0x04,0x00,0x01,0x02,0x77,0x00,0x01,0x02,0x03,0x11,0x04,0x05,0x21,0x31,0x06,0x12,0x41,0x51,0x07,0x61,0x71,0x13,0x22,0x32,0x81,0x08,0x14,0x42,0x91,0xa1,0xb1,0xc1,0x09,0x23,0x33,0x52,0xf0,0x15,0x62,0x72,0xd1,0x0a,0x16,0x24,0x34,0xe1,0x25,0xf1,0x17,0x18,0x19,0x1a,0x26,0x27,0x28,0x29,0x2a,0x35,0x36,0x37,0x38,0x39,0x3a,0x43,0x44,0x45,0x46,0x47,0x48,0x49,0x4a,0x53,0x54,0x55,0x56,0x57,0x58,0x59,0x5a,0x63,0x64,0x65,0x66,0x67,0x68,0x69,0x6a,0x73,0x74,0x75,0x76,0x77,0x78,0x79,0x7a,0x82,0x83,0x84,0x85,0x86,0x87,0x88,0x89,0x8a,0x92,0x93,0x94,0x95,0x96,0x97,0x98,0x99,0x9a,0xa2,0xa3,0xa4,0xa5,0xa6,0xa7,0xa8,0xa9,0xaa,0xb2,0xb3,0xb4,0xb5,0xb6,0xb7,0xb8,0xb9,0xba,0xc2,0xc3,0xc4,0xc5,0xc6,0xc7,0xc8,0xc9,0xca,0xd2,0xd3,0xd4,0xd5,0xd6,0xd7,0xd8,0xd9,0xda,0xe2,0xe3,0xe4,0xe5,0xe6,0xe7,0xe8,0xe9,0xea,0xf2,0xf3,0xf4,0xf5,0xf6,0xf7,0xf8,0xf9,0xfa,0xff,0xda,0x00,0x0c,0x03,0x01,0x00,0x02,0x11,0x03,0x11,0x00,0x3f,0x00,0xf9,0x7e,0x8a,0x28,0xad,0x0f,0xf5,0x00,0xff,0xd9};

void write_bytes(const std::filesystem::path& path, const unsigned char* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
}

}  // namespace

TEST_CASE("white and black PNGs load as 1 and 0") {
    TempDir dir("img");
    save_image(ImageTensor(2, 2, 1.0f), dir / "white.png");
    save_image(ImageTensor(2, 2, 0.0f), dir / "black.png");
    const auto white = load_image(dir / "white.png");
    const auto black = load_image(dir / "black.png");
    CHECK(white.height() == 2);
    CHECK(white.width() == 2);
    for (float v : white.pixels()) CHECK(v == 1.0f);
    for (float v : black.pixels()) CHECK(v == 0.0f);
}

TEST_CASE("save/load round trip stays within one quantization step") {
    TempDir dir("img");
    std::mt19937_64 rng(1);
    const auto img = testing::random_image(5, 7, rng);
    save_image(img, dir / "r.png");
    const auto back = load_image(dir / "r.png");
    REQUIRE(back.pixels().size() == img.pixels().size());
    for (std::size_t i = 0; i < img.pixels().size(); ++i) CHECK(std::abs(back.pixels()[i] - img.pixels()[i]) <= 1.0f / 255);

    save_image(ImageTensor(3, 3, 0.5f), dir / "half.png");
    const auto half = load_image(dir / "half.png");
    for (float v : half.pixels()) {
        CHECK(v >= 0.5f - 1.0f / 255);
        CHECK(v <= 0.5f + 1.0f / 255);
    }
}

TEST_CASE("image file errors") {
    TempDir dir("img");
    CHECK_THROWS_AS(load_image(dir / "missing.png"), NotFoundError);
    CHECK_THROWS_AS(save_image(ImageTensor(2, 2), dir / "no" / "such" / "dir.png"), IoError);

    std::ofstream(dir / "junk.png") << "definitely not an image";
    CHECK_THROWS_AS(load_image(dir / "junk.png"), FormatError);

    write_bytes(dir / "ok.jpg", kSolidJpeg, sizeof(kSolidJpeg));
    write_bytes(dir / "cut.jpg", kSolidJpeg, sizeof(kSolidJpeg) / 2);
    CHECK_THROWS_AS(load_image(dir / "cut.jpg"), FormatError);

    save_image(ImageTensor(4, 4, 0.25f), dir / "p.png");
    std::ifstream in(dir / "p.png", std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream(dir / "cut.png", std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    CHECK_THROWS_AS(load_image(dir / "cut.png"), FormatError);
}

TEST_CASE("JPEG decodes to RGB in [0,1]") {
    TempDir dir("img");
    write_bytes(dir / "ok.jpg", kSolidJpeg, sizeof(kSolidJpeg));
    const auto img = load_image(dir / "ok.jpg");
    CHECK(img.height() == 3);
    CHECK(img.width() == 4);
    CHECK(img.at(1, 1, 0) == doctest::Approx(200.0 / 255).epsilon(0.03));
    CHECK(img.at(1, 1, 1) == doctest::Approx(30.0 / 255).epsilon(0.1));
    CHECK(img.at(1, 1, 2) == doctest::Approx(90.0 / 255).epsilon(0.05));
}

TEST_CASE("ImageTensor validates its invariants") {
    CHECK_THROWS_AS(ImageTensor(0, 3), DimensionError);
    CHECK_THROWS_AS(ImageTensor(2, 2, std::vector<float>(11, 0.0f)), ShapeError);
    CHECK_THROWS_AS(ImageTensor(1, 1, std::vector<float>{0.0f, 1.5f, 0.0f}), RangeError);
    CHECK_THROWS_AS(ImageTensor(1, 1, std::vector<float>{0.0f, NAN, 0.0f}), RangeError);
}

TEST_CASE("resize_short_side dimensions") {
    CHECK(resize_short_side(ImageTensor(512, 512, 0.3f), 512) == ImageTensor(512, 512, 0.3f));
    const auto a = resize_short_side(ImageTensor(600, 800, 0.3f), 512);  // H x W
    CHECK(a.height() == 512);
    CHECK(a.width() == 683);
    const auto b = resize_short_side(ImageTensor(1024, 256, 0.3f), 512);
    CHECK(b.height() == 2048);
    CHECK(b.width() == 512);
    CHECK(std::all_of(b.pixels().begin(), b.pixels().end(), [](float v) { return std::abs(v - 0.3f) < 1e-6f; }));
    CHECK_THROWS(resize_short_side(ImageTensor(4, 4), 0));
}

TEST_CASE("resize_short_side is idempotent at the target") {
    std::mt19937_64 rng(3);
    const auto img = resize_short_side(testing::random_image(30, 45, rng), 20);
    CHECK(img.height() == 20);
    CHECK(resize_short_side(img, 20) == img);
}

TEST_CASE("bilinear resize reproduces linear ramps") {
    ImageTensor ramp(1, 4);
    for (int x = 0; x < 4; ++x) {
        for (int c = 0; c < 3; ++c) ramp.at(0, x, c) = 0.1f + 0.2f * x;
    }
    const auto up = resize_bilinear(ramp, 1, 8);
    // Half-pixel centres: output x maps to (x + 0.5) / 2 - 0.5 in the source.
    CHECK(up.at(0, 3, 0) == doctest::Approx(0.1f + 0.2f * 1.25f));
    CHECK(up.at(0, 0, 0) == doctest::Approx(0.1f));
    CHECK(up.at(0, 7, 0) == doctest::Approx(0.7f));
}

TEST_CASE("random_crop is an exact, seeded sub-grid") {
    std::mt19937_64 rng(4);
    const auto img = testing::random_image(20, 30, rng);
    std::mt19937_64 r1(9), r2(9);
    const auto a = random_crop(img, 8, r1);
    const auto b = random_crop(img, 8, r2);
    CHECK(a == b);
    bool found = false;
    for (int top = 0; top <= 12 && !found; ++top) {
        for (int left = 0; left <= 22 && !found; ++left) found = crop(img, top, left, 8) == a;
    }
    CHECK(found);

    std::mt19937_64 r3(1);
    const auto full = testing::random_image(16, 16, rng);
    CHECK(random_crop(full, 16, r3) == full);
    CHECK_THROWS_AS(random_crop(ImageTensor(200, 300), 256, r3), DimensionError);
}

TEST_CASE("tensor conversion") {
    std::mt19937_64 rng(5);
    const auto img = testing::random_image(3, 4, rng);
    const auto t = to_tensor<float>(img);
    CHECK(t.channels() == 3);
    CHECK(t.at(2, 1, 3) == img.at(1, 3, 2));
    CHECK(from_tensor(t) == img);
    Tensor3<float> wild(3, 1, 1, std::vector<float>{-1.0f, 0.5f, 2.0f});
    const auto clamped = from_tensor(wild);
    CHECK(clamped.pixels() == std::vector<float>{0.0f, 0.5f, 1.0f});
    wild.at(0, 0, 0) = NAN;
    CHECK_THROWS_AS(from_tensor(wild), NumericError);
}

TEST_CASE("16-bit grayscale round trip") {
    TempDir dir("img");
    GrayImage g{2, 3, 16, {0, 1, 300, 65535, 12345, 7}};
    save_gray16_png(g, dir / "d.png");
    const auto back = load_gray_png(dir / "d.png");
    CHECK(back.bit_depth == 16);
    CHECK(back.values == g.values);
}
