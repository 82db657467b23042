#include <doctest.h>

#include <fstream>

#include "pstyle/container.hpp"
#include "pstyle/errors.hpp"
#include "support.hpp"

using namespace pstyle;
using testing::TempDir;

TEST_CASE("archive round trip preserves tensors, shapes and metadata") {
    TempDir dir("arc");
    TensorArchive a;
    a.metadata["preprocessing"] = "rgb_unit";
    a.metadata["note"] = "";
    a.put("x/w", {2, 3}, {1, 2, 3, 4, 5, 6});
    a.put("scalar", {}, {7.5f});
    a.put("empty", {0, 4}, {});
    a.save(dir / "a.pstc");
    const auto b = TensorArchive::load(dir / "a.pstc");
    CHECK(b.metadata == a.metadata);
    REQUIRE(b.contains("x/w"));
    CHECK(b.require("x/w").shape == std::vector<std::uint64_t>{2, 3});
    CHECK(b.require("x/w").values == std::vector<float>{1, 2, 3, 4, 5, 6});
    CHECK(b.require("scalar").values == std::vector<float>{7.5f});
    CHECK(b.require("empty").element_count() == 0);
}

TEST_CASE("equal archives serialize to identical bytes") {
    TempDir dir("arc");
    TensorArchive a, b;
    a.put("b", {1}, {1});
    a.put("a", {1}, {2});
    b.put("a", {1}, {2});
    b.put("b", {1}, {1});
    a.save(dir / "a.pstc");
    b.save(dir / "b.pstc");
    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };
    CHECK(slurp(dir / "a.pstc") == slurp(dir / "b.pstc"));
}

TEST_CASE("archive errors") {
    TempDir dir("arc");
    CHECK_THROWS_AS(TensorArchive::load(dir / "none.pstc"), NotFoundError);
    std::ofstream(dir / "bad.pstc") << "NOPE and more bytes";
    CHECK_THROWS_AS(TensorArchive::load(dir / "bad.pstc"), FormatError);

    TensorArchive a;
    a.put("t", {4}, {1, 2, 3, 4});
    a.save(dir / "t.pstc");
    std::ifstream in(dir / "t.pstc", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream(dir / "cut.pstc", std::ios::binary) << bytes.substr(0, bytes.size() - 3);
    CHECK_THROWS_AS(TensorArchive::load(dir / "cut.pstc"), FormatError);

    CHECK_THROWS_AS(a.put("u", {2, 2}, {1, 2, 3}), ShapeError);
    try {
        a.require("vgg19/conv3_4/bias");
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(std::string(e.what()).find("vgg19/conv3_4/bias") != std::string::npos);
    }
    CHECK_THROWS_AS(a.require_meta("preprocessing"), SchemaError);
}
