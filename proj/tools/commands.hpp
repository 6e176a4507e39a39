#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "slm/report.hpp"

// Batch command implementations behind the CLI front-end. Each command
// validates its inputs, writes its outputs plus a report, and returns the
// report; errors surface as slm::Error subclasses. Reports never embed
// filesystem paths, so identical runs in different directories emit
// identical bytes.
namespace slm::cli {

struct GenArgs {
    std::filesystem::path config;  // optional corpus config file
    std::vector<std::string> overrides;
    std::filesystem::path out;
};
Report cmd_gen(const GenArgs& args);

struct QuantizeArgs {
    std::filesystem::path corpus;
    std::filesystem::path out;  // units directory
    int k = 50;
    std::uint64_t seed = 1;
    int max_frames = 200000;  // k-means fit subsample bound
    int max_iters = 100;
    double tol = 1e-6;
};
Report cmd_quantize(const QuantizeArgs& args);

struct TrainArgs {
    std::filesystem::path corpus;
    std::filesystem::path units;   // required for discrete input/target
    std::filesystem::path config;  // optional model/training config file
    std::vector<std::string> overrides;
    std::filesystem::path out;  // model file
};
Report cmd_train(const TrainArgs& args);

struct EvalAbxArgs {
    std::filesystem::path corpus;
    std::filesystem::path units;  // optional: evaluate dequantized units
    std::string manifest = "abx_dev";
    std::string mode = "within";
    std::filesystem::path out;  // report stem
};
Report cmd_eval_abx(const EvalAbxArgs& args);

struct EvalPairsArgs {
    std::filesystem::path corpus;
    std::filesystem::path units;  // required when the model is discrete-input/target
    std::filesystem::path model;
    std::string manifest = "words_dev";
    std::string tune_on;  // optional dev manifest; selects the window by grid search
    int window = 15;
    int step = 5;
    std::uint64_t seed = 1;
    std::filesystem::path out;
};
Report cmd_eval_pairs(const EvalPairsArgs& args);

struct EvalSimiArgs {
    std::filesystem::path corpus;
    std::filesystem::path units;
    std::filesystem::path model;
    std::string manifest = "simi_dev";
    std::string tune_on;  // optional dev manifest; selects layer/pooling
    int layer = 0;
    std::string pooling = "mean";
    std::filesystem::path out;
};
Report cmd_eval_simi(const EvalSimiArgs& args);

struct ProbeArgs {
    std::filesystem::path corpus;
    std::filesystem::path units;  // optional: probe units instead of features
    std::string split = "train";
    int epochs = 20;
    double learning_rate = 0.05;
    std::uint64_t seed = 1;
    std::filesystem::path out;
};
Report cmd_probe_speaker(const ProbeArgs& args);

struct AlignArgs {
    std::filesystem::path corpus;
    std::filesystem::path units;
    std::string split = "train";
    std::filesystem::path out;  // stem: writes <out>.matrix.tsv, <out>.row_order.txt
};
Report cmd_align_units(const AlignArgs& args);

struct SweepArgs {
    std::filesystem::path corpus;
    std::vector<std::int64_t> k_values = {20, 50, 100, 200, 500, 1000, 2000};
    std::filesystem::path config;  // model/training config for the per-K models
    std::vector<std::string> overrides;
    std::uint64_t seed = 1;
    int window = 15;
    int step = 5;
    std::filesystem::path out;  // directory
};
Report cmd_sweep(const SweepArgs& args);

struct GradCheckArgs {
    std::vector<std::string> losses = {"nll-l", "nll-e", "l1", "l2", "nce"};
    std::uint64_t seed = 7;
    double tolerance = 1e-3;
};
Report cmd_grad_check(const GradCheckArgs& args);

}  // namespace slm::cli
