#include "slm/probes.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "slm/error.hpp"

namespace slm {

// ---------------------------------------------------------------------------
// Speaker probe

namespace {

struct ProbeBatchGrad {
    double loss = 0.0;
    int correct = 0;
};

Eigen::RowVectorXd probe_logits(const ModelParams& params, const Eigen::MatrixXd& final_hidden) {
    return final_hidden.row(0) * params.block("spk.w").transpose() + params.block("spk.b").row(0);
}

// Cross-entropy on the bos token; accumulates head and encoder gradients.
ProbeBatchGrad probe_example(const ModelParams& params, const ModelSequence& seq, int label,
                             Gradients* grads) {
    EncoderTrace trace;
    const ForwardResult fwd = forward(params, seq, {}, grads ? &trace : nullptr);
    const Eigen::MatrixXd& hidden = grads ? trace.final_hidden : fwd.final_hidden;
    const Eigen::RowVectorXd logits = probe_logits(params, hidden);
    const double max_logit = logits.maxCoeff();
    const double lse = max_logit + std::log((logits.array() - max_logit).exp().sum());

    ProbeBatchGrad out;
    out.loss = lse - logits(label);
    Eigen::Index argmax = 0;
    logits.maxCoeff(&argmax);
    out.correct = argmax == label ? 1 : 0;

    if (grads) {
        Eigen::RowVectorXd d_logits = (logits.array() - lse).exp();
        d_logits(label) -= 1.0;
        (*grads)[params.index_of("spk.w")] += d_logits.transpose() * hidden.row(0);
        (*grads)[params.index_of("spk.b")] += d_logits;
        Eigen::MatrixXd d_final = Eigen::MatrixXd::Zero(hidden.rows(), hidden.cols());
        d_final.row(0) = d_logits * params.block("spk.w");
        backward_from_final_hidden(params, trace, d_final, *grads);
    }
    return out;
}

double evaluate_probe(const ModelParams& params, const std::vector<ModelSequence>& seqs,
                      const std::vector<int>& labels, const std::vector<std::size_t>& indices) {
    int correct = 0;
    for (const std::size_t i : indices) {
        correct += probe_example(params, seqs[i], labels[i], nullptr).correct;
    }
    return static_cast<double>(correct) / static_cast<double>(indices.size());
}

ProbeResult run_probe(const std::vector<ModelSequence>& seqs, const std::vector<int>& labels,
                      const ModelConfig& config, const ProbeOptions& options,
                      std::uint64_t seed) {
    const int num_speakers = config.num_classes;
    if (seqs.size() != labels.size()) throw ValidationError("probe: labels/sequences mismatch");
    if (num_speakers < 2) throw ValidationError("probe: need at least 2 speakers");
    std::vector<int> per_class(static_cast<std::size_t>(num_speakers), 0);
    for (const int label : labels) {
        if (label < 0 || label >= num_speakers) throw ValidationError("probe: label out of range");
        ++per_class[static_cast<std::size_t>(label)];
    }
    for (int s = 0; s < num_speakers; ++s) {
        if (per_class[static_cast<std::size_t>(s)] < options.min_per_class) {
            throw ValidationError("probe: speaker " + std::to_string(s) + " has only " +
                                  std::to_string(per_class[static_cast<std::size_t>(s)]) +
                                  " utterances, need >= " +
                                  std::to_string(options.min_per_class));
        }
    }

    // Seeded shuffle, then 80/10/10 by position.
    std::vector<std::size_t> order(seqs.size());
    std::iota(order.begin(), order.end(), 0);
    Rng split_rng(mix_seed(seed, 0));
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[split_rng.uniform_int(i)]);
    }
    const auto n = order.size();
    const auto n_train = static_cast<std::size_t>(std::llround(options.train_fraction * n));
    const auto n_valid = static_cast<std::size_t>(std::llround(options.valid_fraction * n));
    if (n_train == 0 || n_valid == 0 || n_train + n_valid >= n) {
        throw ValidationError("probe: corpus too small for the 80/10/10 split");
    }
    std::vector<std::size_t> train(order.begin(), order.begin() + n_train);
    std::vector<std::size_t> valid(order.begin() + n_train, order.begin() + n_train + n_valid);
    std::vector<std::size_t> test(order.begin() + n_train + n_valid, order.end());

    ModelParams params = ModelParams::init(config, mix_seed(seed, 1));
    Gradients momentum = zero_gradients(params);
    Gradients grads = zero_gradients(params);
    const OptimizerSettings& opt = options.optimizer;

    ProbeResult result;
    result.train_count = train.size();
    result.valid_count = valid.size();
    result.test_count = test.size();

    ModelParams best_params = params;
    int global_step = 0;
    for (int epoch = 0; epoch < options.epochs; ++epoch) {
        Rng epoch_rng(mix_seed(seed, 100 + static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> sched = train;
        for (std::size_t i = sched.size(); i > 1; --i) {
            std::swap(sched[i - 1], sched[epoch_rng.uniform_int(i)]);
        }
        for (std::size_t at = 0; at < sched.size(); at += opt.batch_size) {
            const std::size_t stop = std::min(sched.size(), at + opt.batch_size);
            for (auto& g : grads) g.setZero();
            double batch_loss = 0.0;
            try {
                for (std::size_t i = at; i < stop; ++i) {
                    batch_loss +=
                        probe_example(params, seqs[sched[i]], labels[sched[i]], &grads).loss;
                }
            } catch (const NumericError& e) {
                throw DivergenceError("probe training diverged at step " +
                                      std::to_string(global_step) + ": " + e.what());
            }
            if (!std::isfinite(batch_loss)) {
                throw DivergenceError("probe training diverged at step " +
                                      std::to_string(global_step));
            }
            const double inv_batch = 1.0 / static_cast<double>(stop - at);
            const double warmup =
                opt.warmup_steps > 0
                    ? std::min(1.0, static_cast<double>(global_step + 1) / opt.warmup_steps)
                    : 1.0;
            const double lr = opt.learning_rate * warmup;
            for (std::size_t i = 0; i < params.values.size(); ++i) {
                momentum[i] = opt.momentum * momentum[i] + inv_batch * grads[i];
                params.values[i] -= lr * momentum[i];
            }
            ++global_step;
        }
        const double valid_accuracy = evaluate_probe(params, seqs, labels, valid);
        result.valid_accuracy_per_epoch.push_back(valid_accuracy);
        if (valid_accuracy > result.best_valid_accuracy || result.best_epoch < 0) {
            result.best_valid_accuracy = valid_accuracy;
            result.best_epoch = epoch;
            best_params = params;
        }
    }
    result.test_accuracy = evaluate_probe(best_params, seqs, labels, test);
    return result;
}

}  // namespace

ProbeResult speaker_probe(const std::vector<UnitSequence>& utterances,
                          const std::vector<int>& labels, int num_speakers,
                          const ProbeOptions& options, std::uint64_t seed) {
    if (utterances.empty()) throw ValidationError("probe: no utterances");
    ModelConfig config;
    config.input_mode = InputMode::Discrete;
    config.target_mode = TargetMode::Discrete;
    config.loss = LossKind::NllL;
    config.vocab_size = utterances.front().vocab_size;
    config.model_dim = options.model_dim;
    config.layers = options.encoder_layers;
    config.heads = options.heads;
    config.ffn_mult = options.ffn_mult;
    config.max_seq_len = options.max_seq_len;
    config.with_bos = true;
    config.num_classes = num_speakers;
    config.validate();
    std::vector<ModelSequence> seqs;
    seqs.reserve(utterances.size());
    for (const auto& u : utterances) seqs.push_back(make_model_sequence(config, nullptr, &u));
    return run_probe(seqs, labels, config, options, seed);
}

ProbeResult speaker_probe(const std::vector<FeatureSequence>& utterances,
                          const std::vector<int>& labels, int num_speakers,
                          const ProbeOptions& options, std::uint64_t seed) {
    if (utterances.empty()) throw ValidationError("probe: no utterances");
    ModelConfig config;
    config.input_mode = InputMode::Continuous;
    config.target_mode = TargetMode::Continuous;
    config.loss = LossKind::L2;
    config.feature_dim = static_cast<int>(utterances.front().dim());
    config.model_dim = options.model_dim;
    config.layers = options.encoder_layers;
    config.heads = options.heads;
    config.ffn_mult = options.ffn_mult;
    config.max_seq_len = options.max_seq_len;
    config.with_bos = true;
    config.num_classes = num_speakers;
    config.validate();
    std::vector<ModelSequence> seqs;
    seqs.reserve(utterances.size());
    for (const auto& u : utterances) seqs.push_back(make_model_sequence(config, &u, nullptr));
    return run_probe(seqs, labels, config, options, seed);
}

// ---------------------------------------------------------------------------
// Unit-phoneme alignment

double AlignmentMatrix::purity() const {
    double sum = 0.0;
    std::size_t live = 0;
    for (Eigen::Index u = 0; u < prob.rows(); ++u) {
        if (counts.row(u).sum() == 0) continue;
        sum += prob.row(u).maxCoeff();
        ++live;
    }
    if (live == 0) throw ValidationError("alignment matrix has no occupied rows");
    return sum / static_cast<double>(live);
}

AlignmentMatrix unit_phone_alignment(const std::vector<UnitSequence>& units,
                                     const std::vector<PhoneAlignment>& alignments) {
    if (units.empty() || units.size() != alignments.size()) {
        throw ValidationError("unit_phone_alignment: need matching unit/alignment lists");
    }
    const int vocab = units.front().vocab_size;
    const int phones = static_cast<int>(alignments.front().phone_inventory.size());
    AlignmentMatrix matrix;
    matrix.counts = Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic>::Zero(vocab, phones);
    for (std::size_t i = 0; i < units.size(); ++i) {
        const auto& u = units[i];
        const auto& a = alignments[i];
        if (u.vocab_size != vocab) throw ValidationError("inconsistent vocab across utterances");
        if (static_cast<int>(a.phone_inventory.size()) != phones) {
            throw ValidationError("inconsistent phone inventory across utterances");
        }
        if (u.length() != a.length()) {
            throw ValidationError("utterance " + std::to_string(i) +
                                  ": unit/alignment length mismatch");
        }
        for (std::size_t t = 0; t < u.length(); ++t) {
            matrix.counts(u.units[t], a.labels[t]) += 1;
            ++matrix.total_frames;
        }
    }
    matrix.prob = Eigen::MatrixXd::Zero(vocab, phones);
    for (int u = 0; u < vocab; ++u) {
        const std::int64_t row_total = matrix.counts.row(u).sum();
        if (row_total == 0) {
            matrix.zero_rows.push_back(u);
            continue;
        }
        matrix.prob.row(u) =
            matrix.counts.row(u).cast<double>() / static_cast<double>(row_total);
    }
    return matrix;
}

// ---------------------------------------------------------------------------
// Hierarchical row ordering (average linkage, nearest-neighbor chain)

std::vector<int> order_rows(const AlignmentMatrix& matrix) {
    const int k = static_cast<int>(matrix.prob.rows());
    if (k < 1) throw ValidationError("order_rows: empty matrix");
    if (k == 1) return {0};

    // Cluster ids: 0..k-1 are leaves, k..2k-2 the merges.
    const int total = 2 * k - 1;
    std::vector<double> dist(static_cast<std::size_t>(total) * total, 0.0);
    const auto d = [&](int a, int b) -> double& {
        return dist[static_cast<std::size_t>(a) * total + b];
    };
    for (int i = 0; i < k; ++i) {
        for (int j = i + 1; j < k; ++j) {
            const double v = (matrix.prob.row(i) - matrix.prob.row(j)).norm();
            d(i, j) = d(j, i) = v;
        }
    }

    std::vector<int> cluster_size(static_cast<std::size_t>(total), 0);
    std::vector<int> representative(static_cast<std::size_t>(total), 0);
    std::vector<std::pair<int, int>> children(static_cast<std::size_t>(total), {-1, -1});
    std::vector<char> active(static_cast<std::size_t>(total), 0);
    for (int i = 0; i < k; ++i) {
        cluster_size[static_cast<std::size_t>(i)] = 1;
        representative[static_cast<std::size_t>(i)] = i;
        active[static_cast<std::size_t>(i)] = 1;
    }

    const auto nearest = [&](int c) {
        int best = -1;
        double best_dist = std::numeric_limits<double>::infinity();
        for (int o = 0; o < total; ++o) {
            if (o == c || !active[static_cast<std::size_t>(o)]) continue;
            if (d(c, o) < best_dist) {
                best_dist = d(c, o);
                best = o;
            }
        }
        return best;
    };

    int next_id = k;
    int n_active = k;
    std::vector<int> chain;
    while (n_active > 1) {
        if (chain.empty()) {
            for (int c = 0; c < total; ++c) {
                if (active[static_cast<std::size_t>(c)]) {
                    chain.push_back(c);
                    break;
                }
            }
        }
        for (;;) {
            const int top = chain.back();
            const int nn = nearest(top);
            if (chain.size() >= 2 && nn == chain[chain.size() - 2]) {
                // Mutual nearest neighbors: merge (average linkage update).
                const int a = chain[chain.size() - 2];
                const int b = top;
                chain.pop_back();
                chain.pop_back();
                const int merged = next_id++;
                const double na = cluster_size[static_cast<std::size_t>(a)];
                const double nb = cluster_size[static_cast<std::size_t>(b)];
                for (int o = 0; o < total; ++o) {
                    if (!active[static_cast<std::size_t>(o)] || o == a || o == b) continue;
                    const double v = (na * d(a, o) + nb * d(b, o)) / (na + nb);
                    d(merged, o) = d(o, merged) = v;
                }
                active[static_cast<std::size_t>(a)] = 0;
                active[static_cast<std::size_t>(b)] = 0;
                active[static_cast<std::size_t>(merged)] = 1;
                cluster_size[static_cast<std::size_t>(merged)] =
                    static_cast<int>(na) + static_cast<int>(nb);
                const int ra = representative[static_cast<std::size_t>(a)];
                const int rb = representative[static_cast<std::size_t>(b)];
                representative[static_cast<std::size_t>(merged)] = std::min(ra, rb);
                children[static_cast<std::size_t>(merged)] =
                    ra <= rb ? std::make_pair(a, b) : std::make_pair(b, a);
                --n_active;
                break;
            }
            chain.push_back(nn);
        }
    }

    // Leaf order by depth-first traversal; children already sorted by their
    // smallest original row index.
    std::vector<int> order;
    order.reserve(static_cast<std::size_t>(k));
    std::vector<int> stack = {total - 1};
    while (!stack.empty()) {
        const int node = stack.back();
        stack.pop_back();
        if (node < k) {
            order.push_back(node);
            continue;
        }
        const auto [left, right] = children[static_cast<std::size_t>(node)];
        stack.push_back(right);
        stack.push_back(left);
    }
    return order;
}

}  // namespace slm
