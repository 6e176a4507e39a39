#pragma once

#include "slm/mlm.hpp"

namespace slm {

// Plain SGD with momentum and a linear learning-rate warmup to the peak
// value, constant afterwards.
struct OptimizerSettings {
    double learning_rate = 0.05;
    double momentum = 0.9;
    int warmup_steps = 50;
    int steps = 500;
    int batch_size = 8;
};

struct TrainOptions {
    OptimizerSettings optimizer;
    MaskingPolicy masking;
    std::uint64_t seed = 1;
};

struct TrainResult {
    ModelParams params;
    std::vector<double> loss_trace;  // batch-mean loss per step
    bool nce_negatives_truncated = false;
};

// Deterministic given (config, corpus, options): batches, masks and NCE
// negatives all derive from options.seed. Throws DivergenceError with the
// step index if the loss goes non-finite.
TrainResult train_model(const ModelConfig& config, const std::vector<ModelSequence>& corpus,
                        const TrainOptions& options);

// Compares analytic gradients against central finite differences
// (step 1e-4) for every entry of every parameter block, or only the named
// blocks when a filter is given. Returns the worst relative deviation
// |analytic - fd| / max(1e-6, |analytic| + |fd|).
double gradient_check(const ModelParams& params, const ModelSequence& seq,
                      const std::vector<int>& masked_positions, std::uint64_t negatives_seed,
                      const std::vector<std::string>* only_blocks = nullptr);

}  // namespace slm
