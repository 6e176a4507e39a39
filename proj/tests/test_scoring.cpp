#include <doctest.h>

#include <cmath>
#include <map>

#include "helpers.hpp"
#include "oracles.hpp"
#include "slm/error.hpp"
#include "slm/scoring.hpp"

using namespace slm;
using test::mplp_oracle_nll;

namespace {

ModelConfig small_config(LossKind loss, int vocab = 3, int dim = 4) {
    ModelConfig c;
    c.loss = loss;
    c.target_mode = (loss == LossKind::NllL || loss == LossKind::NllE) ? TargetMode::Discrete
                                                                       : TargetMode::Continuous;
    c.input_mode = loss == LossKind::NllE ? InputMode::Discrete : InputMode::Continuous;
    c.vocab_size = vocab;
    c.feature_dim = dim;
    c.model_dim = 8;
    c.layers = 1;
    c.heads = 2;
    c.ffn_mult = 1;
    c.max_seq_len = 16;
    c.nce_negatives = 2;
    return c;
}

ModelSequence random_sequence(const ModelConfig& config, int len, Rng& rng) {
    FeatureSequence features;
    features.frames.resize(len, config.feature_dim);
    for (int t = 0; t < len; ++t) {
        for (int d = 0; d < config.feature_dim; ++d) {
            features.frames(t, d) = static_cast<float>(rng.normal());
        }
    }
    UnitSequence units;
    units.vocab_size = config.vocab_size;
    for (int t = 0; t < len; ++t) {
        units.units.push_back(static_cast<std::int32_t>(rng.uniform_int(config.vocab_size)));
    }
    const bool needs_features = config.input_mode == InputMode::Continuous ||
                                config.target_mode == TargetMode::Continuous;
    const bool needs_units =
        config.input_mode == InputMode::Discrete || config.target_mode == TargetMode::Discrete;
    return make_model_sequence(config, needs_features ? &features : nullptr,
                               needs_units ? &units : nullptr);
}

EvalItem simple_item(const std::string& id, ItemKind kind, const std::string& group,
                     const std::string& subset = "main") {
    EvalItem item;
    item.item_id = id;
    item.file_ref = "features/" + id;
    item.kind = kind;
    item.speaker_id = "s0";
    item.group_id = group;
    item.subset_name = subset;
    return item;
}

}  // namespace

TEST_CASE("m-PLP window arithmetic: T == M is exactly one window") {
    const ModelConfig config = small_config(LossKind::NllL);
    Rng rng(51);
    const ModelSequence seq = random_sequence(config, 5, rng);
    const ModelParams params = ModelParams::init(config, 70);
    // One full-coverage window regardless of the step.
    const double a = m_plp(params, seq, {5, 1}, 0);
    const double b = m_plp(params, seq, {5, 4}, 0);
    CHECK(a == doctest::Approx(b).epsilon(1e-12));
    CHECK(a == doctest::Approx(mplp_oracle_nll(params, seq, 5, 1)).epsilon(1e-9));
}

TEST_CASE("m-PLP equals the hand-enumerated window sums for 100 random cases") {
    Rng rng(52);
    for (int trial = 0; trial < 100; ++trial) {
        ModelConfig config = small_config(LossKind::NllL, 2 + static_cast<int>(rng.uniform_int(2)));
        const int len = 2 + static_cast<int>(rng.uniform_int(5));  // T <= 6
        const ModelSequence seq = random_sequence(config, len, rng);
        const ModelParams params = ModelParams::init(config, 700 + trial);
        const int window = 1 + static_cast<int>(rng.uniform_int(3));  // M <= 3
        const int step = 1 + static_cast<int>(rng.uniform_int(3));
        const double got = m_plp(params, seq, {window, step}, 0);
        const double expected = mplp_oracle_nll(params, seq, window, step);
        REQUIRE(got == doctest::Approx(expected).epsilon(1e-9));
        REQUIRE(got <= 1e-12);  // NLL-type m-PLP is never positive
    }
}

TEST_CASE("sequences shorter than the window score as one full window") {
    const ModelConfig config = small_config(LossKind::NllL);
    Rng rng(53);
    const ModelSequence seq = random_sequence(config, 4, rng);
    const ModelParams params = ModelParams::init(config, 71);
    CHECK(m_plp(params, seq, {9, 5}, 0) ==
          doctest::Approx(m_plp(params, seq, {4, 5}, 0)).epsilon(1e-12));
}

TEST_CASE("a perfect-reconstruction L2 model scores zero and corruption lowers it") {
    ModelConfig config = small_config(LossKind::L2);
    config.layers = 0;
    Rng rng(54);
    // Constant target sequence; a zero-weight model with bias = target is a
    // perfect reconstructor.
    FeatureSequence features;
    features.frames.resize(6, config.feature_dim);
    for (int t = 0; t < 6; ++t) {
        for (int d = 0; d < config.feature_dim; ++d) {
            features.frames(t, d) = 0.5f + 0.25f * static_cast<float>(d);
        }
    }
    const ModelSequence seq = make_model_sequence(config, &features, nullptr);
    ModelParams params = ModelParams::init(config, 72);
    params.block("reg.w").setZero();
    params.block("reg.b") = seq.target_features.row(0);

    const double perfect = m_plp(params, seq, {3, 1}, 0);
    CHECK(perfect == doctest::Approx(0.0));

    ModelSequence corrupted = seq;
    corrupted.target_features(2, 1) += 1.0;
    CHECK(m_plp(params, corrupted, {3, 1}, 0) < perfect - 1e-9);
}

TEST_CASE("pair accuracy: ties, oracle and label-swap antisymmetry") {
    EvalManifest manifest;
    for (int g = 0; g < 7; ++g) {
        manifest.items.push_back(
            simple_item("g" + std::to_string(g) + "a", ItemKind::PairA, "g" + std::to_string(g),
                        g % 2 ? "odd" : "even"));
        manifest.items.push_back(
            simple_item("g" + std::to_string(g) + "b", ItemKind::PairB, "g" + std::to_string(g),
                        g % 2 ? "odd" : "even"));
    }

    SUBCASE("constant scorer ties everything at 0.5") {
        const auto result = pair_accuracy(manifest, [](const EvalItem&) { return 1.25; });
        CHECK(result.accuracy == doctest::Approx(0.5));
        CHECK(result.pairs == 7);
    }
    SUBCASE("an oracle scorer reaches exactly 1") {
        const auto result = pair_accuracy(manifest, [](const EvalItem& item) {
            return item.kind == ItemKind::PairA ? 1.0 : 0.0;
        });
        CHECK(result.accuracy == doctest::Approx(1.0));
    }
    SUBCASE("swapping labels maps accuracy a to 1 - a exactly") {
        // Deterministic but uneven scorer: some pairs right, some wrong.
        const auto scorer = [](const EvalItem& item) {
            const int g = item.group_id[1] - '0';
            const double right = item.kind == ItemKind::PairA ? 1.0 : 0.0;
            return g % 3 == 0 ? right : 1.0 - right;
        };
        const double a = pair_accuracy(manifest, scorer).accuracy;
        EvalManifest swapped = manifest;
        for (auto& item : swapped.items) {
            item.kind = item.kind == ItemKind::PairA ? ItemKind::PairB : ItemKind::PairA;
        }
        const double b = pair_accuracy(swapped, scorer).accuracy;
        CHECK(a + b == doctest::Approx(1.0));
        CHECK(a != doctest::Approx(0.5));
    }
}

TEST_CASE("pooled representations collapse time the way each kind says") {
    const ModelConfig config = small_config(LossKind::L2);
    Rng rng(55);
    const ModelSequence one = random_sequence(config, 1, rng);
    const ModelParams params = ModelParams::init(config, 73);
    // A single frame is its own mean, max and min.
    const auto mean1 = pooled_representation(params, one, {0, Pooling::Mean});
    const auto max1 = pooled_representation(params, one, {0, Pooling::Max});
    const auto min1 = pooled_representation(params, one, {0, Pooling::Min});
    CHECK((mean1 - max1).norm() == doctest::Approx(0.0));
    CHECK((mean1 - min1).norm() == doctest::Approx(0.0));

    const ModelSequence two = random_sequence(config, 2, rng);
    const auto mean2 = pooled_representation(params, two, {1, Pooling::Mean});
    const auto max2 = pooled_representation(params, two, {1, Pooling::Max});
    CHECK((mean2 - max2).norm() > 1e-9);

    CHECK_THROWS_AS(pooled_representation(params, two, {5, Pooling::Mean}), ValidationError);
}

TEST_CASE("identical items have cosine similarity 1") {
    const ModelConfig config = small_config(LossKind::L2);
    Rng rng(56);
    const ModelSequence seq = random_sequence(config, 4, rng);
    const ModelParams params = ModelParams::init(config, 74);
    const auto u = pooled_representation(params, seq, {1, Pooling::Mean});
    CHECK(u.dot(u) / (u.norm() * u.norm()) == doctest::Approx(1.0));
}

TEST_CASE("pearson basics") {
    CHECK(pearson({1, 2, 3}, {2, 4, 6}) == doctest::Approx(1.0));
    CHECK(pearson({1, 2, 3}, {-2, -4, -6}) == doctest::Approx(-1.0));
    CHECK_THROWS_AS(pearson({1, 1, 1}, {1, 2, 3}), ValidationError);
    CHECK_THROWS_AS(pearson({1}, {2}), ValidationError);
    // Invariance under positive affine transforms.
    Rng rng(57);
    std::vector<double> x, y;
    for (int i = 0; i < 20; ++i) {
        x.push_back(rng.normal());
        y.push_back(rng.normal());
    }
    std::vector<double> x2 = x;
    for (auto& v : x2) v = 3.0 * v + 7.0;
    CHECK(pearson(x, y) == doctest::Approx(pearson(x2, y)).epsilon(1e-12));
}

TEST_CASE("wsimi weighting arithmetic") {
    SUBCASE("model == human scores gives 100") {
        SimiSubset s;
        s.domain = "d0";
        s.name = "d0/s0";
        s.model_scores = {0.1, 0.5, 0.9, 0.3};
        s.human_scores = s.model_scores;
        CHECK(wsimi({s}).value == doctest::Approx(100.0));
    }
    SUBCASE("model == -human gives -100") {
        SimiSubset s;
        s.domain = "d0";
        s.name = "d0/s0";
        s.human_scores = {0.1, 0.5, 0.9, 0.3};
        for (const double h : s.human_scores) s.model_scores.push_back(-h);
        CHECK(wsimi({s}).value == doctest::Approx(-100.0));
    }
    SUBCASE("sizes 10 and 30 with PCCs 0 and 1 give a domain score of 75") {
        Rng rng(58);
        SimiSubset a;  // PCC 0 by construction, size 10
        a.domain = "dom";
        a.name = "dom/a";
        // Symmetric cloud: x in {-1, 1} repeated, y = x^2 pattern has r = 0.
        a.model_scores = {-2, -1, 0, 1, 2, -2, -1, 0, 1, 2};
        a.human_scores = {4, 1, 0, 1, 4, 4, 1, 0, 1, 4};
        CHECK(pearson(a.model_scores, a.human_scores) == doctest::Approx(0.0));
        SimiSubset b;  // PCC 1, size 30
        b.domain = "dom";
        b.name = "dom/b";
        for (int i = 0; i < 30; ++i) {
            const double v = rng.normal();
            b.model_scores.push_back(v);
            b.human_scores.push_back(2.0 * v + 1.0);
        }
        const WsimiResult result = wsimi({a, b});
        CHECK(result.value == doctest::Approx(75.0).epsilon(1e-9));
    }
    SUBCASE("final value is the unweighted mean of the domain scores") {
        SimiSubset a;
        a.domain = "d0";
        a.name = "d0/s";
        a.model_scores = {1, 2, 3};
        a.human_scores = {1, 2, 3};  // PCC 1
        SimiSubset b;
        b.domain = "d1";
        b.name = "d1/s";
        b.model_scores = {1, 2, 3};
        b.human_scores = {3, 2, 1};  // PCC -1
        CHECK(wsimi({a, b}).value == doctest::Approx(0.0));
    }
    SUBCASE("zero-variance subsets are excluded with their weight") {
        SimiSubset good;
        good.domain = "d0";
        good.name = "d0/good";
        good.model_scores = {1, 2, 3};
        good.human_scores = {1, 2, 3};
        SimiSubset flat;
        flat.domain = "d0";
        flat.name = "d0/flat";
        flat.model_scores = {1, 1, 1};
        flat.human_scores = {1, 2, 3};
        const WsimiResult result = wsimi({good, flat});
        CHECK(result.value == doctest::Approx(100.0));
        REQUIRE(result.excluded.size() == 1);
        CHECK(result.excluded[0] == "d0/flat");
    }
}

TEST_CASE("simi subset grouping reads the domain from the name prefix") {
    std::vector<SimiPairScore> scores;
    for (int i = 0; i < 4; ++i) {
        SimiPairScore s;
        s.group_id = "g" + std::to_string(i);
        s.subset_name = i < 2 ? "libri/a" : "synth/b";
        s.model_score = i;
        s.human_score = i;
        scores.push_back(s);
    }
    const auto subsets = group_simi_subsets(scores);
    REQUIRE(subsets.size() == 2);
    CHECK(subsets[0].domain == "libri");
    CHECK(subsets[1].domain == "synth");
    CHECK(subsets[0].model_scores.size() == 2);
}

TEST_CASE("window tuning is grid-order invariant with deterministic tie-breaks") {
    const ModelConfig config = small_config(LossKind::NllL);
    Rng rng(59);
    const ModelParams params = ModelParams::init(config, 75);
    std::map<std::string, ModelSequence> store;
    EvalManifest manifest;
    for (int g = 0; g < 4; ++g) {
        for (int m = 0; m < 2; ++m) {
            const auto item = simple_item("t" + std::to_string(g) + char('a' + m),
                                          m == 0 ? ItemKind::PairA : ItemKind::PairB,
                                          "t" + std::to_string(g));
            manifest.items.push_back(item);
            store.emplace(item.item_id, random_sequence(config, 6, rng));
        }
    }
    const SequenceLookup lookup = [&](const EvalItem& item) { return store.at(item.item_id); };

    const std::vector<WindowSpec> grid_a = {{2, 1}, {3, 1}, {4, 1}};
    const std::vector<WindowSpec> grid_b = {{4, 1}, {2, 1}, {3, 1}};
    const auto in_order = tune_window(params, manifest, grid_a, lookup, 3);
    const auto shuffled = tune_window(params, manifest, grid_b, lookup, 3);
    CHECK(in_order.best.window == shuffled.best.window);
    CHECK(in_order.best.step == shuffled.best.step);
    CHECK(in_order.best_accuracy == doctest::Approx(shuffled.best_accuracy));

    SUBCASE("grid of one selects that spec") {
        const auto single = tune_window(params, manifest, {{3, 2}}, lookup, 3);
        CHECK(single.best.window == 3);
        CHECK(single.best.step == 2);
    }
}

TEST_CASE("default grids mirror the documented search spaces") {
    const auto hundred = default_window_grid(100.0f);
    REQUIRE(hundred.size() == 5);
    CHECK(hundred[0].window == 15);
    CHECK(hundred[4].window == 55);
    for (const auto& w : hundred) CHECK(w.step == 5);

    const auto fifty = default_window_grid(50.0f);
    REQUIRE(fifty.size() == 5);
    CHECK(fifty[0].window == 5);
    CHECK(fifty[4].window == 25);

    const auto pooling = default_pooling_grid(2);
    CHECK(pooling.size() == 9);  // 3 layers x 3 kinds
}
