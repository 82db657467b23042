#include <doctest.h>

#include <cmath>
#include <fstream>

#include "pstyle/container.hpp"
#include "pstyle/depth_eval.hpp"
#include "pstyle/errors.hpp"
#include "pstyle/imaging.hpp"
#include "support.hpp"

using namespace pstyle;
using testing::TempDir;

namespace {

DepthMap random_map(int h, int w, std::mt19937_64& rng, double scale = 1.0) {
    std::uniform_real_distribution<double> u(0.0, scale);
    std::vector<double> v(static_cast<std::size_t>(h) * w);
    for (auto& x : v) x = u(rng);
    return DepthMap(h, w, std::move(v));
}

void save_depth_tensor(const std::vector<float>& v, std::uint64_t h, std::uint64_t w, const std::filesystem::path& p) {
    TensorArchive a;
    a.put("depth", {h, w}, v);
    a.save(p);
}

}  // namespace

TEST_CASE("depth map validation") {
    CHECK_NOTHROW(DepthMap(1, 2, {0.0, 3.5}, "x"));
    CHECK_THROWS_AS(DepthMap(2, 2, {0.0, 1.0, 2.0}), ShapeError);
    CHECK_THROWS_AS(DepthMap(1, 2, {0.0, -1.0}), RangeError);
    CHECK_THROWS_AS(DepthMap(1, 2, {0.0, NAN}), NumericError);
    CHECK_THROWS_AS(DepthMap(0, 2, {}), DimensionError);
}

TEST_CASE("hand-computed pair errors") {
    const DepthMap c(2, 2, {0.5, 0.5, 0.5, 0.5});

    SUBCASE("identical maps") {
        const auto e = pair_depth_error(c, c);
        CHECK(e.mae == 0.0);
        CHECK(e.rmse == 0.0);
    }
    SUBCASE("constant offset") {
        const auto e = pair_depth_error(c, DepthMap(2, 2, {0.625, 0.625, 0.625, 0.625}));
        CHECK(e.mae == 0.125);
        CHECK(e.rmse == 0.125);
    }
    SUBCASE("mixed differences") {
        // diffs {0, 0.25, -0.25, 0.5}
        const auto e = pair_depth_error(c, DepthMap(2, 2, {0.5, 0.75, 0.25, 1.0}));
        CHECK(e.mae == 0.25);
        CHECK(e.rmse == std::sqrt(0.09375));
        // diffs {0, 0.2, -0.2, 0.4}
        const auto f = pair_depth_error(c, DepthMap(2, 2, {0.5, 0.7, 0.3, 0.9}));
        CHECK(f.mae == doctest::Approx(0.2).epsilon(1e-12));
        CHECK(f.rmse == doctest::Approx(std::sqrt(0.06)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(pair_depth_error(c, DepthMap(1, 4, {0, 0, 0, 0})), ShapeError);
}

TEST_CASE("pair error properties on random maps") {
    std::mt19937_64 rng(1);
    for (int i = 0; i < 1000; ++i) {
        const auto a = random_map(6, 5, rng, 10.0);
        const auto b = random_map(6, 5, rng, 10.0);
        const auto ab = pair_depth_error(a, b);
        const auto ba = pair_depth_error(b, a);
        REQUIRE(ab.rmse >= ab.mae);
        REQUIRE(ab.mae == ba.mae);
        REQUIRE(ab.rmse == ba.rmse);
    }
    const auto a = random_map(4, 4, rng);
    const auto b = random_map(4, 4, rng);
    std::vector<double> a2 = a.values(), b2 = b.values();
    for (auto& v : a2) v *= 4.0;
    for (auto& v : b2) v *= 4.0;
    const auto base = pair_depth_error(a, b);
    const auto scaled = pair_depth_error(DepthMap(4, 4, a2), DepthMap(4, 4, b2));
    CHECK(scaled.mae == doctest::Approx(4.0 * base.mae).epsilon(1e-12));
    CHECK(scaled.rmse == doctest::Approx(4.0 * base.rmse).epsilon(1e-12));
}

TEST_CASE("min-max normalization") {
    const auto n = DepthMap(1, 3, {2.0, 4.0, 6.0}).minmax_normalized();
    CHECK(n.values() == std::vector<double>{0.0, 0.5, 1.0});
    const auto flat = DepthMap(1, 2, {3.0, 3.0}).minmax_normalized();
    CHECK(flat.values() == std::vector<double>{0.0, 0.0});
}

TEST_CASE("loading depth files") {
    TempDir dir("depth");
    GrayImage g{2, 2, 16, {0, 65535, 32768, 1000}};
    save_gray16_png(g, dir / "d.png");
    const auto d = load_depth(dir / "d.png");
    CHECK(d.height() == 2);
    CHECK(d.values()[1] == 1.0);
    CHECK(d.values()[3] == doctest::Approx(1000.0 / 65535.0));

    save_depth_tensor({0.5f, 2.0f, 7.25f}, 1, 3, dir / "d.pstc");
    const auto t = load_depth(dir / "d.pstc");
    CHECK(t.width() == 3);
    CHECK(t.values() == std::vector<double>{0.5, 2.0, 7.25});

    TensorArchive wrong;
    wrong.put("other", {1, 1}, {1.0f});
    wrong.save(dir / "w.pstc");
    CHECK_THROWS_AS(load_depth(dir / "w.pstc"), SchemaError);
    CHECK_THROWS_AS(load_depth(dir / "missing.png"), NotFoundError);
}

TEST_CASE("corpus evaluation") {
    TempDir dir("corpus");
    save_depth_tensor({1, 1, 1, 1}, 2, 2, dir / "c0.pstc");
    save_depth_tensor({1.125f, 1.125f, 1.125f, 1.125f}, 2, 2, dir / "s0.pstc");
    save_depth_tensor({0, 0, 0, 0}, 2, 2, dir / "c1.pstc");
    save_depth_tensor({0.375f, 0.375f, 0.375f, 0.375f}, 2, 2, dir / "s1.pstc");
    save_depth_tensor({0, 0, 0}, 1, 3, dir / "odd.pstc");
    {
        std::ofstream m(dir / "manifest.csv");
        m << "pair_id,content_depth_path,stylized_depth_path\n";
        m << "a,c0.pstc,s0.pstc\n";
        m << "b," << (dir / "c1.pstc").string() << ",s1.pstc\n";
    }

    const auto pairs = load_manifest(dir / "manifest.csv");
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[0].content_path == dir / "c0.pstc");

    const auto report = evaluate_corpus(pairs);
    CHECK(report.n == 2);
    CHECK(report.per_pair[0].pair_id == "a");
    CHECK(report.per_pair[0].mae == 0.125);
    CHECK(report.per_pair[1].rmse == 0.375);
    CHECK(report.aggregate_mae == 0.25);
    CHECK(report.aggregate_rmse == (report.per_pair[0].rmse + report.per_pair[1].rmse) / 2);

    const auto single = evaluate_corpus({pairs[0]});
    CHECK(single.aggregate_mae == single.per_pair[0].mae);
    CHECK(single.aggregate_rmse == single.per_pair[0].rmse);

    write_report_csv(report, dir / "report.csv");
    std::ifstream in(dir / "report.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "pair_id,mae,rmse");
    CHECK(report_summary(report) == "pairs=2 mae=0.250000 rmse=0.250000");

    CHECK_THROWS_AS(evaluate_corpus({}), CardinalityError);
    try {
        evaluate_corpus({{"bad-shape", dir / "c0.pstc", dir / "odd.pstc"}});
        FAIL("expected a shape error");
    } catch (const ShapeError& e) {
        CHECK(std::string(e.what()).find("bad-shape") != std::string::npos);
    }
    try {
        evaluate_corpus({{"gone", dir / "c0.pstc", dir / "nope.pstc"}});
        FAIL("expected an io error");
    } catch (const IoError& e) {
        CHECK(std::string(e.what()).find("gone") != std::string::npos);
    }
}

TEST_CASE("manifest format errors") {
    TempDir dir("manifest");
    std::ofstream(dir / "bad.csv") << "id,a,b\nx,1,2\n";
    CHECK_THROWS_AS(load_manifest(dir / "bad.csv"), FormatError);
    std::ofstream(dir / "short.csv") << "pair_id,content_depth_path,stylized_depth_path\nx,1\n";
    CHECK_THROWS_AS(load_manifest(dir / "short.csv"), FormatError);
    CHECK_THROWS_AS(load_manifest(dir / "absent.csv"), NotFoundError);
}
