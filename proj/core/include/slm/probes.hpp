#pragma once

#include <cstdint>
#include <vector>

#include "slm/mlm_train.hpp"
#include "slm/types.hpp"

namespace slm {

// Two-layer transformer classifier over a sequence representation, with a
// prepended begin-of-sequence token and the classification head on that
// token. Split is 80/10/10 by default; the best-validation-epoch parameters
// are evaluated on the held-out test set.
struct ProbeOptions {
    int encoder_layers = 2;
    int model_dim = 32;
    int heads = 2;
    int ffn_mult = 4;
    int max_seq_len = 256;
    int epochs = 20;
    double train_fraction = 0.8;
    double valid_fraction = 0.1;
    int min_per_class = 10;
    OptimizerSettings optimizer;  // reuses the trainer defaults
};

struct ProbeResult {
    double test_accuracy = 0.0;
    double best_valid_accuracy = 0.0;
    int best_epoch = -1;
    std::vector<double> valid_accuracy_per_epoch;
    std::size_t train_count = 0, valid_count = 0, test_count = 0;
};

// Discrete variant: sequences of codebook units, embedded with a learned
// table. Continuous variant: frame features through a learned projection.
ProbeResult speaker_probe(const std::vector<UnitSequence>& utterances,
                          const std::vector<int>& labels, int num_speakers,
                          const ProbeOptions& options, std::uint64_t seed);
ProbeResult speaker_probe(const std::vector<FeatureSequence>& utterances,
                          const std::vector<int>& labels, int num_speakers,
                          const ProbeOptions& options, std::uint64_t seed);

// P(phoneme | unit) with raw co-occurrence counts. Rows of unused units are
// zero and flagged rather than dropped, so codebook collapse stays visible.
struct AlignmentMatrix {
    Eigen::MatrixXd prob;                                          // K x P, rows sum to 1
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> counts;  // K x P
    std::vector<int> zero_rows;
    std::size_t total_frames = 0;

    // Mean of row maxima over rows with nonzero counts.
    double purity() const;
};

AlignmentMatrix unit_phone_alignment(const std::vector<UnitSequence>& units,
                                     const std::vector<PhoneAlignment>& alignments);

// Row display order from average-linkage agglomerative clustering of the
// probability rows (Euclidean), dendrogram leaf order, ties broken by row
// index. Always a valid permutation of 0..K-1.
std::vector<int> order_rows(const AlignmentMatrix& matrix);

}  // namespace slm
