#pragma once

#include <functional>
#include <string>
#include <vector>

#include "slm/mlm.hpp"
#include "slm/types.hpp"

namespace slm {

// Sliding masked window: M frames masked per window, windows advance by step.
struct WindowSpec {
    int window = 15;  // M
    int step = 5;     // delta t
};

enum class Pooling { Mean, Max, Min };

std::string to_string(Pooling p);
Pooling pooling_from_string(const std::string& s);

struct PoolingSpec {
    int layer = 0;  // 0 = embedding output, rising through the encoder
    Pooling pooling = Pooling::Mean;
};

// Model-based pseudo log-probability: for j = 0..floor((T-M)/step), mask the
// M positions starting at j*step, run one forward pass, and accumulate the
// per-position pseudo log-probabilities of the targets under that mask.
// Sequences shorter than M are scored as a single window covering all of T.
// The sum is not length-normalized. NLL-type results are always <= 0.
double m_plp(const ModelParams& params, const ModelSequence& seq, const WindowSpec& w,
             std::uint64_t negatives_seed);

// Resolves an evaluation item to the representation the model consumes.
using SequenceLookup = std::function<ModelSequence(const EvalItem&)>;
// Maps an item to a comparable score (higher = more probable / preferred).
using ItemScorer = std::function<double(const EvalItem&)>;

ItemScorer make_mplp_scorer(const ModelParams& params, const SequenceLookup& lookup,
                            const WindowSpec& w, std::uint64_t negatives_seed);

struct PairAccuracyResult {
    double accuracy = 0.0;
    std::size_t pairs = 0;
    // subset -> (accuracy, pair count)
    std::vector<std::tuple<std::string, double, std::size_t>> per_subset;
};

// Per pair: 1 if the correct member scores strictly higher, 0.5 on an exact
// tie, 0 otherwise. Pairs are scored in parallel; the reduction is ordered.
PairAccuracyResult pair_accuracy(const EvalManifest& manifest, const ItemScorer& scorer);

// Fixed-length representation: pool the chosen layer's hidden states over
// time. Pooling a single frame returns the frame for every pooling kind.
Eigen::VectorXd pooled_representation(const ModelParams& params, const ModelSequence& seq,
                                      const PoolingSpec& spec);

struct SimiPairScore {
    std::string group_id;
    std::string subset_name;
    double model_score = 0.0;  // cosine of the two pooled representations
    double human_score = 0.0;
};

std::vector<SimiPairScore> similarity_scores(const ModelParams& params,
                                             const EvalManifest& manifest,
                                             const PoolingSpec& spec,
                                             const SequenceLookup& lookup);

// Pearson correlation coefficient; needs n >= 2 and nonzero variance on both
// sides.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

struct SimiSubset {
    std::string domain;
    std::string name;
    std::vector<double> model_scores;
    std::vector<double> human_scores;
};

// Groups per-pair scores into subsets; the domain is the subset_name prefix
// before '/', or the whole name when there is no slash.
std::vector<SimiSubset> group_simi_subsets(const std::vector<SimiPairScore>& scores);

struct WsimiResult {
    double value = 0.0;  // x100
    std::vector<std::pair<std::string, double>> domain_scores;          // x100
    std::vector<std::tuple<std::string, double, std::size_t>> subsets;  // raw PCC, size
    std::vector<std::string> excluded;  // zero-variance subsets, weight redistributed
};

// Pearson per subset; per domain a subset-size-weighted mean; final value the
// unweighted mean of the domain scores, reported x100.
WsimiResult wsimi(const std::vector<SimiSubset>& subsets);

// Exhaustive dev-set grid searches. Grids are evaluated in canonical order
// (window: ascending M then step; pooling: ascending layer then mean < max <
// min) and ties keep the earlier candidate, so selection is invariant to the
// order the grid was supplied in.
struct WindowTuneResult {
    WindowSpec best;
    double best_accuracy = 0.0;
    std::vector<std::pair<WindowSpec, double>> evaluated;
};

WindowTuneResult tune_window(const ModelParams& params, const EvalManifest& dev_pairs,
                             std::vector<WindowSpec> grid, const SequenceLookup& lookup,
                             std::uint64_t negatives_seed);

struct PoolingTuneResult {
    PoolingSpec best;
    double best_wsimi = 0.0;
    std::vector<std::pair<PoolingSpec, double>> evaluated;
};

PoolingTuneResult tune_pooling(const ModelParams& params, const EvalManifest& dev_simi,
                               std::vector<PoolingSpec> grid, const SequenceLookup& lookup);

// Default search spaces: M in {15,25,35,45,55} with step 5 for 100 Hz-style
// corpora, M in {5,10,15,20,25} for 50 Hz-style ones (rate below 75 Hz);
// pooling over every layer and all three pooling kinds.
std::vector<WindowSpec> default_window_grid(float frame_rate_hz);
std::vector<PoolingSpec> default_pooling_grid(int encoder_layers);

}  // namespace slm
