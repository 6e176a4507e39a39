#include <doctest.h>

#include <cmath>
#include <map>

#include "helpers.hpp"
#include "oracles.hpp"
#include "slm/abx.hpp"
#include "slm/error.hpp"

using namespace slm;
using test::dtw_oracle;

namespace {

FeatureSequence from_rows(std::initializer_list<std::initializer_list<float>> rows) {
    FeatureSequence seq;
    seq.frames.resize(static_cast<Eigen::Index>(rows.size()),
                      static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& row : rows) {
        Eigen::Index j = 0;
        for (const float v : row) seq.frames(i, j++) = v;
        ++i;
    }
    return seq;
}

}  // namespace

TEST_CASE("angular distance on axis-aligned vectors") {
    const auto ex = from_rows({{1, 0}});
    const auto ey = from_rows({{0, 1}});
    const auto neg = from_rows({{-1, 0}});
    CHECK(angular_distance(ex.frames.row(0), ex.frames.row(0)) == doctest::Approx(0.0));
    CHECK(angular_distance(ex.frames.row(0), ey.frames.row(0)) ==
          doctest::Approx(std::acos(0.0)));
    CHECK(angular_distance(ex.frames.row(0), neg.frames.row(0)) ==
          doctest::Approx(std::acos(-1.0)));

    const auto zero = from_rows({{0, 0}});
    CHECK_THROWS_AS(angular_distance(ex.frames.row(0), zero.frames.row(0)), ValidationError);
}

TEST_CASE("dtw basics") {
    Rng rng(21);
    const auto x = test::random_features(5, 3, rng);
    CHECK(dtw_distance(x, x) == doctest::Approx(0.0));

    const auto a = from_rows({{1, 0}});
    const auto b = from_rows({{0, 2}});
    CHECK(dtw_distance(a, b) ==
          doctest::Approx(angular_distance(a.frames.row(0), b.frames.row(0))));

    SUBCASE("dimension mismatch") {
        const auto c = from_rows({{1, 0, 0}});
        CHECK_THROWS_AS(dtw_distance(a, c), ValidationError);
    }
}

TEST_CASE("dtw equals brute-force path enumeration for short sequences") {
    Rng rng(22);
    for (int trial = 0; trial < 80; ++trial) {
        const int tx = 1 + static_cast<int>(rng.uniform_int(6));
        const int ty = 1 + static_cast<int>(rng.uniform_int(6));
        const auto x = test::random_features(tx, 3, rng);
        const auto y = test::random_features(ty, 3, rng);
        REQUIRE(dtw_distance(x, y) == doctest::Approx(dtw_oracle(x, y)).epsilon(1e-9));
    }
}

TEST_CASE("dtw symmetry and positive-scale invariance") {
    Rng rng(23);
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = test::random_features(1 + static_cast<int>(rng.uniform_int(10)), 4, rng);
        const auto y = test::random_features(1 + static_cast<int>(rng.uniform_int(10)), 4, rng);
        REQUIRE(dtw_distance(x, y) == doctest::Approx(dtw_distance(y, x)).epsilon(1e-12));

        FeatureSequence sx = x, sy = y;
        sx.frames *= 3.5f;
        sy.frames *= 0.25f;
        REQUIRE(std::abs(dtw_distance(sx, sy) - dtw_distance(x, y)) < 1e-9);
    }
}

namespace {

AbxTriplet make_triplet(const std::string& a, const std::string& b, const std::string& x,
                        const std::string& cat_a, const std::string& cat_b,
                        const std::string& spk) {
    AbxTriplet t;
    t.a_ref = a;
    t.b_ref = b;
    t.x_ref = x;
    t.category_a = cat_a;
    t.category_b = cat_b;
    t.speaker_a = t.speaker_b = t.speaker_x = spk;
    return t;
}

}  // namespace

TEST_CASE("abx scores 0 when a matches x exactly and 0.5 on exact ties") {
    Rng rng(24);
    std::map<std::string, FeatureSequence> features;
    features["a"] = test::random_features(4, 3, rng);
    features["x"] = features["a"];
    features["b"] = test::random_features(5, 3, rng);
    const auto lookup = [&](const std::string& ref) -> const FeatureSequence& {
        return features.at(ref);
    };

    const auto result =
        abx_error({make_triplet("a", "b", "x", "cat1", "cat2", "s0")}, lookup, AbxMode::Within);
    CHECK(result.error == doctest::Approx(0.0));

    // b identical to a: d(a,x) == d(b,x) exactly, every triplet ties.
    features["b"] = features["a"];
    const auto tie =
        abx_error({make_triplet("a", "b", "x", "cat1", "cat2", "s0")}, lookup, AbxMode::Within);
    CHECK(tie.error == doctest::Approx(0.5));
}

TEST_CASE("abx aggregates per cell and respects the speaker mode") {
    Rng rng(25);
    std::map<std::string, FeatureSequence> features;
    for (const char* ref : {"a1", "b1", "x1", "a2", "b2", "x2"}) {
        features[ref] = test::random_features(3, 3, rng);
    }
    const auto lookup = [&](const std::string& ref) -> const FeatureSequence& {
        return features.at(ref);
    };
    std::vector<AbxTriplet> triplets = {
        make_triplet("a1", "b1", "x1", "c1", "c2", "s0"),
        make_triplet("a2", "b2", "x2", "c1", "c2", "s1"),
    };
    auto across = triplets[0];
    across.speaker_x = "s9";
    triplets.push_back(across);

    const auto within = abx_error(triplets, lookup, AbxMode::Within);
    CHECK(within.triplets_scored == 2);
    CHECK(within.cells.size() == 2);

    const auto across_result = abx_error(triplets, lookup, AbxMode::Across);
    CHECK(across_result.triplets_scored == 1);

    SUBCASE("no matching triplets is an error") {
        triplets.pop_back();
        CHECK_THROWS_AS(abx_error(triplets, lookup, AbxMode::Across), ValidationError);
    }
}

TEST_CASE("triplets_from_manifest resolves roles from categories") {
    EvalManifest manifest;
    const auto add = [&](const std::string& id, const std::string& cat) {
        EvalItem item;
        item.item_id = id;
        item.file_ref = "features/" + id;
        item.kind = ItemKind::Abx;
        item.speaker_id = "s0";
        item.category_label = cat;
        item.group_id = "g0";
        manifest.items.push_back(item);
    };
    add("first", "p-q-r");
    add("second", "p-z-r");
    add("third", "p-q-r");

    const auto triplets = triplets_from_manifest(manifest);
    REQUIRE(triplets.size() == 1);
    CHECK(triplets[0].a_ref == "features/first");
    CHECK(triplets[0].b_ref == "features/second");
    CHECK(triplets[0].x_ref == "features/third");

    SUBCASE("all-same categories are rejected") {
        manifest.items[1].category_label = "p-q-r";
        CHECK_THROWS_AS(triplets_from_manifest(manifest), ValidationError);
    }
}
