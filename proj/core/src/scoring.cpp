#include "slm/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "slm/error.hpp"
#include "slm/parallel.hpp"

namespace slm {

std::string to_string(Pooling p) {
    switch (p) {
        case Pooling::Mean: return "mean";
        case Pooling::Max: return "max";
        case Pooling::Min: return "min";
    }
    throw ValidationError("unknown pooling kind");
}

Pooling pooling_from_string(const std::string& s) {
    if (s == "mean") return Pooling::Mean;
    if (s == "max") return Pooling::Max;
    if (s == "min") return Pooling::Min;
    throw ConfigError("unknown pooling kind: " + s);
}

double m_plp(const ModelParams& params, const ModelSequence& seq, const WindowSpec& w,
             std::uint64_t negatives_seed) {
    if (w.window < 1 || w.step < 1) {
        throw ValidationError("m_plp: window and step must be >= 1");
    }
    const int seq_len = static_cast<int>(seq.length(params.config));
    const int window = std::min(w.window, seq_len);
    const int n_windows = (seq_len - window) / w.step + 1;
    double total = 0.0;
    for (int j = 0; j < n_windows; ++j) {
        const int start = j * w.step;
        std::vector<int> masked(static_cast<std::size_t>(window));
        for (int m = 0; m < window; ++m) masked[static_cast<std::size_t>(m)] = start + m;
        const ForwardResult fwd = forward(params, seq, masked, nullptr);
        const LossResult loss = compute_loss(params, seq, fwd.outputs, masked,
                                             mix_seed(negatives_seed, static_cast<std::uint64_t>(j)),
                                             /*want_grad=*/false);
        for (const double plp : loss.per_position_plp) total += plp;
    }
    return total;
}

ItemScorer make_mplp_scorer(const ModelParams& params, const SequenceLookup& lookup,
                            const WindowSpec& w, std::uint64_t negatives_seed) {
    return [&params, lookup, w, negatives_seed](const EvalItem& item) {
        const ModelSequence seq = lookup(item);
        return m_plp(params, seq, w, negatives_seed);
    };
}

PairAccuracyResult pair_accuracy(const EvalManifest& manifest, const ItemScorer& scorer) {
    struct Pair {
        const EvalItem* correct = nullptr;
        const EvalItem* foil = nullptr;
    };
    std::map<std::string, Pair> groups;
    std::vector<std::string> order;
    for (const auto& item : manifest.items) {
        if (item.kind != ItemKind::PairA && item.kind != ItemKind::PairB) continue;
        auto [it, inserted] = groups.try_emplace(item.group_id);
        if (inserted) order.push_back(item.group_id);
        (item.kind == ItemKind::PairA ? it->second.correct : it->second.foil) = &item;
    }
    if (order.empty()) throw ValidationError("manifest has no pair items");
    for (const auto& gid : order) {
        const Pair& p = groups[gid];
        if (!p.correct || !p.foil) {
            throw ValidationError("pair group " + gid + " is missing a member");
        }
    }

    std::vector<double> outcome(order.size());
    parallel_for(order.size(), [&](std::size_t i) {
        const Pair& p = groups[order[i]];
        const double s_correct = scorer(*p.correct);
        const double s_foil = scorer(*p.foil);
        outcome[i] = s_correct > s_foil ? 1.0 : (s_correct < s_foil ? 0.0 : 0.5);
    });

    PairAccuracyResult result;
    result.pairs = order.size();
    std::map<std::string, std::pair<double, std::size_t>> subsets;
    double total = 0.0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        total += outcome[i];
        auto& bucket = subsets[groups[order[i]].correct->subset_name];
        bucket.first += outcome[i];
        bucket.second += 1;
    }
    result.accuracy = total / static_cast<double>(order.size());
    for (const auto& [name, acc] : subsets) {
        result.per_subset.emplace_back(name, acc.first / static_cast<double>(acc.second),
                                       acc.second);
    }
    return result;
}

Eigen::VectorXd pooled_representation(const ModelParams& params, const ModelSequence& seq,
                                      const PoolingSpec& spec) {
    if (spec.layer < 0 || spec.layer > params.config.layers) {
        throw ValidationError("pooling layer " + std::to_string(spec.layer) +
                              " out of range for a " + std::to_string(params.config.layers) +
                              "-layer model");
    }
    const ForwardResult fwd = forward(params, seq, {}, nullptr);
    const Eigen::MatrixXd& hidden = fwd.hidden[static_cast<std::size_t>(spec.layer)];
    Eigen::VectorXd pooled;
    switch (spec.pooling) {
        case Pooling::Mean: pooled = hidden.colwise().mean().transpose(); break;
        case Pooling::Max: pooled = hidden.colwise().maxCoeff().transpose(); break;
        case Pooling::Min: pooled = hidden.colwise().minCoeff().transpose(); break;
    }
    if (pooled.norm() == 0.0) {
        throw ValidationError("pooled representation is the zero vector");
    }
    return pooled;
}

std::vector<SimiPairScore> similarity_scores(const ModelParams& params,
                                             const EvalManifest& manifest,
                                             const PoolingSpec& spec,
                                             const SequenceLookup& lookup) {
    struct Group {
        const EvalItem* first = nullptr;
        const EvalItem* second = nullptr;
    };
    std::map<std::string, Group> groups;
    std::vector<std::string> order;
    for (const auto& item : manifest.items) {
        if (item.kind != ItemKind::Simi) continue;
        auto [it, inserted] = groups.try_emplace(item.group_id);
        if (inserted) order.push_back(item.group_id);
        (it->second.first ? it->second.second : it->second.first) = &item;
    }
    if (order.empty()) throw ValidationError("manifest has no simi items");

    std::vector<SimiPairScore> scores(order.size());
    parallel_for(order.size(), [&](std::size_t i) {
        const Group& g = groups[order[i]];
        if (!g.first || !g.second) {
            throw ValidationError("simi group " + order[i] + " is missing a member");
        }
        const Eigen::VectorXd u = pooled_representation(params, lookup(*g.first), spec);
        const Eigen::VectorXd v = pooled_representation(params, lookup(*g.second), spec);
        SimiPairScore s;
        s.group_id = order[i];
        s.subset_name = g.first->subset_name;
        s.model_score = u.dot(v) / (u.norm() * v.norm());
        s.human_score = *g.first->human_score;
        scores[i] = std::move(s);
    });
    return scores;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw ValidationError("pearson: length mismatch");
    const std::size_t n = x.size();
    if (n < 2) throw ValidationError("pearson: need at least 2 samples");
    double mean_x = 0.0, mean_y = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_x += x[i];
        mean_y += y[i];
    }
    mean_x /= static_cast<double>(n);
    mean_y /= static_cast<double>(n);
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mean_x;
        const double dy = y[i] - mean_y;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw ValidationError("pearson: zero variance");
    }
    return sxy / std::sqrt(sxx * syy);
}

std::vector<SimiSubset> group_simi_subsets(const std::vector<SimiPairScore>& scores) {
    std::map<std::string, SimiSubset> by_name;
    std::vector<std::string> order;
    for (const auto& s : scores) {
        auto [it, inserted] = by_name.try_emplace(s.subset_name);
        if (inserted) {
            order.push_back(s.subset_name);
            it->second.name = s.subset_name;
            const auto slash = s.subset_name.find('/');
            it->second.domain =
                slash == std::string::npos ? s.subset_name : s.subset_name.substr(0, slash);
        }
        it->second.model_scores.push_back(s.model_score);
        it->second.human_scores.push_back(s.human_score);
    }
    std::vector<SimiSubset> subsets;
    subsets.reserve(order.size());
    for (const auto& name : order) subsets.push_back(std::move(by_name[name]));
    return subsets;
}

WsimiResult wsimi(const std::vector<SimiSubset>& subsets) {
    if (subsets.empty()) throw ValidationError("wsimi: no subsets");
    WsimiResult result;
    struct DomainAcc {
        double weighted_sum = 0.0;
        double weight = 0.0;
    };
    std::map<std::string, DomainAcc> domains;
    std::vector<std::string> domain_order;
    for (const auto& subset : subsets) {
        if (!domains.count(subset.domain)) domain_order.push_back(subset.domain);
        domains[subset.domain];  // materialize even if every subset is excluded
        const std::size_t size = subset.model_scores.size();
        if (size < 2) {
            throw ValidationError("wsimi: subset " + subset.name + " has fewer than 2 pairs");
        }
        double pcc;
        try {
            pcc = pearson(subset.model_scores, subset.human_scores);
        } catch (const ValidationError&) {
            // Zero variance: exclude the subset, its weight falls away.
            result.excluded.push_back(subset.name);
            continue;
        }
        result.subsets.emplace_back(subset.name, pcc, size);
        auto& acc = domains[subset.domain];
        acc.weighted_sum += pcc * static_cast<double>(size);
        acc.weight += static_cast<double>(size);
    }
    double domain_sum = 0.0;
    std::size_t live_domains = 0;
    for (const auto& name : domain_order) {
        const DomainAcc& acc = domains[name];
        if (acc.weight == 0.0) continue;  // every subset excluded
        const double score = 100.0 * acc.weighted_sum / acc.weight;
        result.domain_scores.emplace_back(name, score);
        domain_sum += score;
        ++live_domains;
    }
    if (live_domains == 0) {
        throw ValidationError("wsimi: every subset was excluded for zero variance");
    }
    result.value = domain_sum / static_cast<double>(live_domains);
    return result;
}

WindowTuneResult tune_window(const ModelParams& params, const EvalManifest& dev_pairs,
                             std::vector<WindowSpec> grid, const SequenceLookup& lookup,
                             std::uint64_t negatives_seed) {
    if (grid.empty()) throw ValidationError("tune_window: empty grid");
    std::sort(grid.begin(), grid.end(), [](const WindowSpec& a, const WindowSpec& b) {
        return a.window != b.window ? a.window < b.window : a.step < b.step;
    });
    WindowTuneResult result;
    bool have_best = false;
    for (const auto& spec : grid) {
        const auto scorer = make_mplp_scorer(params, lookup, spec, negatives_seed);
        const double accuracy = pair_accuracy(dev_pairs, scorer).accuracy;
        result.evaluated.emplace_back(spec, accuracy);
        if (!have_best || accuracy > result.best_accuracy) {
            have_best = true;
            result.best = spec;
            result.best_accuracy = accuracy;
        }
    }
    return result;
}

PoolingTuneResult tune_pooling(const ModelParams& params, const EvalManifest& dev_simi,
                               std::vector<PoolingSpec> grid, const SequenceLookup& lookup) {
    if (grid.empty()) throw ValidationError("tune_pooling: empty grid");
    std::sort(grid.begin(), grid.end(), [](const PoolingSpec& a, const PoolingSpec& b) {
        if (a.layer != b.layer) return a.layer < b.layer;
        return static_cast<int>(a.pooling) < static_cast<int>(b.pooling);
    });
    PoolingTuneResult result;
    bool have_best = false;
    for (const auto& spec : grid) {
        const auto scores = similarity_scores(params, dev_simi, spec, lookup);
        const double value = wsimi(group_simi_subsets(scores)).value;
        result.evaluated.emplace_back(spec, value);
        if (!have_best || value > result.best_wsimi) {
            have_best = true;
            result.best = spec;
            result.best_wsimi = value;
        }
    }
    return result;
}

std::vector<WindowSpec> default_window_grid(float frame_rate_hz) {
    if (frame_rate_hz < 75.0f) {
        return {{5, 5}, {10, 5}, {15, 5}, {20, 5}, {25, 5}};
    }
    return {{15, 5}, {25, 5}, {35, 5}, {45, 5}, {55, 5}};
}

std::vector<PoolingSpec> default_pooling_grid(int encoder_layers) {
    std::vector<PoolingSpec> grid;
    for (int layer = 0; layer <= encoder_layers; ++layer) {
        for (const Pooling p : {Pooling::Mean, Pooling::Max, Pooling::Min}) {
            grid.push_back({layer, p});
        }
    }
    return grid;
}

}  // namespace slm
