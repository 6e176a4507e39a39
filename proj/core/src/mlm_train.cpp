#include "slm/mlm_train.hpp"

#include <algorithm>
#include <cmath>

#include "slm/error.hpp"

namespace slm {

TrainResult train_model(const ModelConfig& config, const std::vector<ModelSequence>& corpus,
                        const TrainOptions& options) {
    config.validate();
    if (corpus.empty()) throw ValidationError("train: empty corpus");
    const OptimizerSettings& opt = options.optimizer;
    if (opt.steps < 0 || opt.batch_size < 1) {
        throw ConfigError("train: steps must be >= 0 and batch_size >= 1");
    }

    TrainResult result;
    result.params = ModelParams::init(config, mix_seed(options.seed, 0));
    ModelParams& params = result.params;

    Gradients momentum = zero_gradients(params);
    Rng batch_rng(mix_seed(options.seed, 1));
    MaskingPolicy masking = options.masking;
    masking.seed = mix_seed(options.seed, 2);
    const std::uint64_t negatives_base = mix_seed(options.seed, 3);

    Gradients grads = zero_gradients(params);
    for (int step = 0; step < opt.steps; ++step) {
        for (auto& g : grads) g.setZero();
        double batch_loss = 0.0;
        for (int b = 0; b < opt.batch_size; ++b) {
            const std::uint64_t draw = step * static_cast<std::uint64_t>(opt.batch_size) + b;
            const auto& seq = corpus[batch_rng.uniform_int(corpus.size())];
            const int len = static_cast<int>(seq.length(config));
            const MaskSet masks = sample_masks(masking, len, draw);
            try {
                EncoderTrace trace;
                const ForwardResult fwd = forward(params, seq, masks.positions, &trace);
                const LossResult loss = compute_loss(params, seq, fwd.outputs, masks.positions,
                                                     mix_seed(negatives_base, draw), true);
                result.nce_negatives_truncated |= loss.negatives_truncated;
                batch_loss += loss.value;
                backward(params, trace, loss.d_outputs, grads);
            } catch (const NumericError& e) {
                throw DivergenceError("training diverged at step " + std::to_string(step) +
                                      ": " + e.what());
            }
        }
        batch_loss /= opt.batch_size;
        if (!std::isfinite(batch_loss)) {
            throw DivergenceError("training diverged at step " + std::to_string(step));
        }
        result.loss_trace.push_back(batch_loss);

        const double warmup =
            opt.warmup_steps > 0
                ? std::min(1.0, static_cast<double>(step + 1) / opt.warmup_steps)
                : 1.0;
        const double lr = opt.learning_rate * warmup;
        const double inv_batch = 1.0 / opt.batch_size;
        for (std::size_t i = 0; i < params.values.size(); ++i) {
            momentum[i] = opt.momentum * momentum[i] + inv_batch * grads[i];
            params.values[i] -= lr * momentum[i];
            if (!params.values[i].allFinite()) {
                throw DivergenceError("training diverged at step " + std::to_string(step) +
                                      " (non-finite parameters in " + params.names[i] + ")");
            }
        }
    }
    return result;
}

namespace {

double loss_only(const ModelParams& params, const ModelSequence& seq,
                 const std::vector<int>& masked_positions, std::uint64_t negatives_seed) {
    const ForwardResult fwd = forward(params, seq, masked_positions, nullptr);
    return compute_loss(params, seq, fwd.outputs, masked_positions, negatives_seed, false).value;
}

}  // namespace

double gradient_check(const ModelParams& params, const ModelSequence& seq,
                      const std::vector<int>& masked_positions, std::uint64_t negatives_seed,
                      const std::vector<std::string>* only_blocks) {
    ModelParams work = params;

    EncoderTrace trace;
    const ForwardResult fwd = forward(work, seq, masked_positions, &trace);
    const LossResult loss =
        compute_loss(work, seq, fwd.outputs, masked_positions, negatives_seed, true);
    Gradients grads = zero_gradients(work);
    backward(work, trace, loss.d_outputs, grads);

    const double h = 1e-4;
    double worst = 0.0;
    for (std::size_t b = 0; b < work.values.size(); ++b) {
        if (only_blocks &&
            std::find(only_blocks->begin(), only_blocks->end(), work.names[b]) ==
                only_blocks->end()) {
            continue;
        }
        Eigen::MatrixXd& block = work.values[b];
        for (Eigen::Index i = 0; i < block.rows(); ++i) {
            for (Eigen::Index j = 0; j < block.cols(); ++j) {
                const double original = block(i, j);
                block(i, j) = original + h;
                const double up = loss_only(work, seq, masked_positions, negatives_seed);
                block(i, j) = original - h;
                const double down = loss_only(work, seq, masked_positions, negatives_seed);
                block(i, j) = original;
                const double fd = (up - down) / (2.0 * h);
                const double analytic = grads[b](i, j);
                const double rel =
                    std::abs(analytic - fd) / std::max(1e-6, std::abs(analytic) + std::abs(fd));
                worst = std::max(worst, rel);
            }
        }
    }
    return worst;
}

}  // namespace slm
