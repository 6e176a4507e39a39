#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "slm/error.hpp"
#include "slm/mlm_train.hpp"

using namespace slm;
using test::TempDir;

namespace {

ModelConfig tiny_config(LossKind loss) {
    ModelConfig c;
    c.loss = loss;
    c.target_mode = (loss == LossKind::NllL || loss == LossKind::NllE) ? TargetMode::Discrete
                                                                       : TargetMode::Continuous;
    c.input_mode = (loss == LossKind::NllE) ? InputMode::Discrete : InputMode::Continuous;
    c.vocab_size = 3;
    c.feature_dim = 4;
    c.model_dim = 8;
    c.layers = 2;
    c.heads = 2;
    c.ffn_mult = 1;
    c.max_seq_len = 16;
    c.nce_negatives = 3;
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

}  // namespace

TEST_CASE("config validation rejects incompatible loss and target modes") {
    ModelConfig c = tiny_config(LossKind::NllL);
    c.target_mode = TargetMode::Continuous;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = tiny_config(LossKind::L2);
    c.target_mode = TargetMode::Discrete;
    CHECK_THROWS_AS(c.validate(), ConfigError);

    c = tiny_config(LossKind::NllL);
    c.heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("mask sampler covers the target band and is deterministic") {
    MaskingPolicy policy;
    policy.seed = 99;

    SUBCASE("T=1 masks the single position") {
        const MaskSet masks = sample_masks(policy, 1, 0);
        REQUIRE(masks.positions.size() == 1);
        CHECK(masks.positions[0] == 0);
    }
    SUBCASE("realized coverage stays in [0.4, 0.6] for T=200 over 1000 streams") {
        for (int stream = 0; stream < 1000; ++stream) {
            const MaskSet masks = sample_masks(policy, 200, static_cast<std::uint64_t>(stream));
            const double coverage = static_cast<double>(masks.positions.size()) / 200.0;
            REQUIRE(coverage >= 0.4);
            REQUIRE(coverage <= 0.6);
        }
    }
    SUBCASE("same stream, same masks") {
        const MaskSet a = sample_masks(policy, 57, 123);
        const MaskSet b = sample_masks(policy, 57, 123);
        CHECK(a.positions == b.positions);
        const MaskSet c = sample_masks(policy, 57, 124);
        CHECK(a.positions != c.positions);
    }
    SUBCASE("positions are sorted, unique, in range") {
        const MaskSet masks = sample_masks(policy, 33, 5);
        std::set<int> seen;
        int prev = -1;
        for (const int pos : masks.positions) {
            REQUIRE(pos > prev);
            REQUIRE(pos >= 0);
            REQUIRE(pos < 33);
            REQUIRE(seen.insert(pos).second);
            prev = pos;
        }
    }
}

TEST_CASE("forward is defined everywhere with an empty mask set") {
    const ModelConfig config = tiny_config(LossKind::NllL);
    Rng rng(31);
    const ModelSequence seq = random_sequence(config, 7, rng);
    const ModelParams params = ModelParams::init(config, 1);
    const ForwardResult fwd = forward(params, seq, {});
    CHECK(fwd.outputs.rows() == 7);
    CHECK(fwd.outputs.cols() == config.vocab_size);
    CHECK(fwd.hidden.size() == 3);  // embedding + 2 blocks
    CHECK(fwd.outputs.allFinite());
}

TEST_CASE("NLL-l logits softmax-normalize at every position") {
    const ModelConfig config = tiny_config(LossKind::NllL);
    Rng rng(32);
    const ModelSequence seq = random_sequence(config, 6, rng);
    const ModelParams params = ModelParams::init(config, 2);
    const ForwardResult fwd = forward(params, seq, {1, 2});
    for (Eigen::Index t = 0; t < fwd.outputs.rows(); ++t) {
        const Eigen::RowVectorXd logits = fwd.outputs.row(t);
        const double lse = std::log((logits.array() - logits.maxCoeff()).exp().sum()) +
                           logits.maxCoeff();
        CHECK((logits.array() - lse).exp().sum() == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("0-layer encoder without positions is position-local") {
    ModelConfig config = tiny_config(LossKind::NllL);
    config.layers = 0;
    config.use_positions = false;
    Rng rng(33);
    ModelSequence seq = random_sequence(config, 5, rng);
    const ModelParams params = ModelParams::init(config, 3);
    const ForwardResult before = forward(params, seq, {});

    // Swap two unmasked input positions; exactly those two output rows move.
    ModelSequence swapped = seq;
    swapped.input_features.row(1).swap(swapped.input_features.row(3));
    swapped.target_units = seq.target_units;
    const ForwardResult after = forward(params, swapped, {});
    CHECK((before.outputs.row(0) - after.outputs.row(0)).norm() == doctest::Approx(0.0));
    CHECK((before.outputs.row(2) - after.outputs.row(2)).norm() == doctest::Approx(0.0));
    CHECK((before.outputs.row(4) - after.outputs.row(4)).norm() == doctest::Approx(0.0));
    CHECK((before.outputs.row(1) - after.outputs.row(3)).norm() == doctest::Approx(0.0));
    CHECK((before.outputs.row(3) - after.outputs.row(1)).norm() == doctest::Approx(0.0));
    CHECK((before.outputs.row(1) - after.outputs.row(1)).norm() > 1e-9);
}

TEST_CASE("uniform logits give ln K per masked position") {
    ModelConfig config = tiny_config(LossKind::NllL);
    config.vocab_size = 2;
    Rng rng(34);
    const ModelSequence seq = random_sequence(config, 6, rng);
    const ModelParams params = ModelParams::init(config, 4);
    // Zero logits regardless of the encoder: uniform distribution over K=2.
    const Eigen::MatrixXd outputs = Eigen::MatrixXd::Zero(6, 2);
    const LossResult loss = compute_loss(params, seq, outputs, {0, 3, 5}, 0, false);
    CHECK(loss.value == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    for (const double plp : loss.per_position_plp) {
        CHECK(plp == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
    }
}

TEST_CASE("exact predictions give zero L1 and L2 loss") {
    for (const LossKind kind : {LossKind::L1, LossKind::L2}) {
        const ModelConfig config = tiny_config(kind);
        Rng rng(35);
        const ModelSequence seq = random_sequence(config, 5, rng);
        const ModelParams params = ModelParams::init(config, 5);
        const Eigen::MatrixXd outputs = seq.target_features;
        const LossResult loss = compute_loss(params, seq, outputs, {1, 4}, 0, false);
        CHECK(loss.value == doctest::Approx(0.0));
    }
}

TEST_CASE("NCE matches a hand-enumerated candidate softmax") {
    ModelConfig config = tiny_config(LossKind::Nce);
    config.nce_negatives = 2;  // 3 candidates total
    Rng rng(36);
    const ModelSequence seq = random_sequence(config, 6, rng);
    const ModelParams params = ModelParams::init(config, 6);
    Eigen::MatrixXd outputs(6, config.feature_dim);
    for (int t = 0; t < 6; ++t) {
        for (int d = 0; d < config.feature_dim; ++d) outputs(t, d) = rng.normal();
    }
    const int pos = 2;
    const std::uint64_t seed = 777;
    const LossResult loss = compute_loss(params, seq, outputs, {pos}, seed, false);

    // Oracle: replicate the candidate draw, then enumerate the softmax by
    // hand from cosines.
    Rng neg_rng(mix_seed(seed, pos));
    std::vector<int> pool;
    for (int t = 0; t < 6; ++t) {
        if (t != pos) pool.push_back(t);
    }
    for (int i = 0; i < 2; ++i) {
        const auto j = i + static_cast<int>(neg_rng.uniform_int(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    std::vector<int> candidates = {pos, pool[0], pool[1]};
    std::vector<double> logits;
    const Eigen::RowVectorXd pred = outputs.row(pos);
    for (const int c : candidates) {
        const Eigen::RowVectorXd target = seq.target_features.row(c);
        const double cosine = pred.dot(target) / (pred.norm() * target.norm());
        logits.push_back(cosine / config.temperature);
    }
    double denom = 0.0;
    for (const double l : logits) denom += std::exp(l);
    const double expected = -(logits[0] - std::log(denom));
    CHECK(loss.value == doctest::Approx(expected).epsilon(1e-9));
}

TEST_CASE("NCE falls back to the available positions on short sequences") {
    ModelConfig config = tiny_config(LossKind::Nce);
    config.nce_negatives = 100;
    Rng rng(37);
    const ModelSequence seq = random_sequence(config, 4, rng);
    const ModelParams params = ModelParams::init(config, 7);
    const ForwardResult fwd = forward(params, seq, {1});
    const LossResult loss = compute_loss(params, seq, fwd.outputs, {1}, 5, false);
    CHECK(loss.negatives_truncated);
    CHECK(loss.negatives_used == 3);
}

TEST_CASE("learning rate zero leaves parameters untouched") {
    const ModelConfig config = tiny_config(LossKind::NllL);
    Rng rng(38);
    std::vector<ModelSequence> corpus;
    for (int i = 0; i < 3; ++i) corpus.push_back(random_sequence(config, 8, rng));
    TrainOptions options;
    options.optimizer.learning_rate = 0.0;
    options.optimizer.steps = 10;
    options.optimizer.batch_size = 2;
    options.seed = 9;
    const TrainResult result = train_model(config, corpus, options);
    const ModelParams fresh = ModelParams::init(config, mix_seed(options.seed, 0));
    for (std::size_t b = 0; b < fresh.values.size(); ++b) {
        REQUIRE(result.params.values[b] == fresh.values[b]);
    }
}

TEST_CASE("a single example is memorized under NLL-l") {
    ModelConfig config = tiny_config(LossKind::NllL);
    config.input_mode = InputMode::Discrete;
    Rng rng(39);
    std::vector<ModelSequence> corpus = {random_sequence(config, 10, rng)};
    TrainOptions options;
    options.optimizer.learning_rate = 0.2;
    options.optimizer.steps = 300;
    options.optimizer.warmup_steps = 30;
    options.optimizer.batch_size = 4;
    options.seed = 10;
    const TrainResult result = train_model(config, corpus, options);
    const double threshold = 0.1 * std::log(static_cast<double>(config.vocab_size));
    CHECK(result.loss_trace.back() < threshold);
}

TEST_CASE("training is seed-deterministic down to the parameter file bytes") {
    TempDir tmp;
    const ModelConfig config = tiny_config(LossKind::NllE);
    Rng rng(40);
    std::vector<ModelSequence> corpus;
    for (int i = 0; i < 4; ++i) corpus.push_back(random_sequence(config, 9, rng));
    TrainOptions options;
    options.optimizer.steps = 20;
    options.optimizer.batch_size = 2;
    options.seed = 11;
    const TrainResult a = train_model(config, corpus, options);
    const TrainResult b = train_model(config, corpus, options);
    write_model(a.params, tmp.path / "a.zmlm");
    write_model(b.params, tmp.path / "b.zmlm");
    CHECK(test::read_file_bytes(tmp.path / "a.zmlm") ==
          test::read_file_bytes(tmp.path / "b.zmlm"));
    CHECK(a.loss_trace == b.loss_trace);
}

TEST_CASE("model file round trips through read_model") {
    TempDir tmp;
    const ModelConfig config = tiny_config(LossKind::L1);
    const ModelParams params = ModelParams::init(config, 55);
    write_model(params, tmp.path / "m.zmlm");
    const ModelParams back = read_model(tmp.path / "m.zmlm");
    CHECK(back.names == params.names);
    write_model(back, tmp.path / "m2.zmlm");
    CHECK(test::read_file_bytes(tmp.path / "m.zmlm") ==
          test::read_file_bytes(tmp.path / "m2.zmlm"));
}

TEST_CASE("gradient check covers all five losses on a small model") {
    // The full-tolerance battery lives in the acceptance suite; this is the
    // fast regression version on an even smaller batch.
    for (const LossKind kind :
         {LossKind::NllL, LossKind::NllE, LossKind::L1, LossKind::L2, LossKind::Nce}) {
        ModelConfig config = tiny_config(kind);
        config.layers = 1;
        Rng rng(41 + static_cast<int>(kind));
        const ModelSequence seq = random_sequence(config, 5, rng);
        const ModelParams params = ModelParams::init(config, 60 + static_cast<int>(kind));
        const double worst = gradient_check(params, seq, {1, 3}, 1234);
        CHECK(worst < 1e-3);
    }
}

TEST_CASE("gradient check over a frozen subset only touches the named blocks") {
    const ModelConfig config = tiny_config(LossKind::NllL);
    Rng rng(42);
    const ModelSequence seq = random_sequence(config, 5, rng);
    const ModelParams params = ModelParams::init(config, 61);
    const std::vector<std::string> blocks = {"cls.w", "cls.b"};
    const double worst = gradient_check(params, seq, {0, 2}, 0, &blocks);
    CHECK(worst < 1e-3);
}

TEST_CASE("L2 on a 0-layer model matches the closed-form least-squares gradient") {
    ModelConfig config = tiny_config(LossKind::L2);
    config.layers = 0;
    Rng rng(43);
    const ModelSequence seq = random_sequence(config, 4, rng);
    const ModelParams params = ModelParams::init(config, 62);

    EncoderTrace trace;
    const ForwardResult fwd = forward(params, seq, {1, 2}, &trace);
    const LossResult loss = compute_loss(params, seq, fwd.outputs, {1, 2}, 0, true);
    Gradients grads = zero_gradients(params);
    backward(params, trace, loss.d_outputs, grads);

    // d/dW of mean_t mean_d (W h_t + b - y_t)^2 is 2/(n D) sum_t r_t h_t^T.
    const Eigen::MatrixXd& hidden = trace.final_hidden;
    Eigen::MatrixXd expected_w =
        Eigen::MatrixXd::Zero(config.feature_dim, config.model_dim);
    Eigen::RowVectorXd expected_b = Eigen::RowVectorXd::Zero(config.feature_dim);
    const double scale = 2.0 / (2.0 * config.feature_dim);  // 2 masked positions
    for (const int t : {1, 2}) {
        const Eigen::RowVectorXd residual = fwd.outputs.row(t) - seq.target_features.row(t);
        expected_w += scale * residual.transpose() * hidden.row(t);
        expected_b += scale * residual;
    }
    CHECK((grads[params.index_of("reg.w")] - expected_w).norm() < 1e-9);
    CHECK((grads[params.index_of("reg.b")].row(0) - expected_b).norm() < 1e-9);
}

TEST_CASE("divergence aborts with the step index") {
    ModelConfig config = tiny_config(LossKind::NllL);
    Rng rng(44);
    std::vector<ModelSequence> corpus = {random_sequence(config, 8, rng)};
    TrainOptions options;
    options.optimizer.learning_rate = 1e6;  // guaranteed blow-up
    options.optimizer.warmup_steps = 0;
    options.optimizer.steps = 50;
    options.seed = 12;
    CHECK_THROWS_AS(train_model(config, corpus, options), DivergenceError);
}
