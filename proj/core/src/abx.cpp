#include "slm/abx.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "slm/error.hpp"
#include "slm/parallel.hpp"

namespace slm {

double angular_distance(const Eigen::Ref<const Eigen::RowVectorXf>& u,
                        const Eigen::Ref<const Eigen::RowVectorXf>& v) {
    if (u.cols() != v.cols()) {
        throw ValidationError("angular_distance: dimension mismatch");
    }
    const Eigen::RowVectorXd ud = u.cast<double>();
    const Eigen::RowVectorXd vd = v.cast<double>();
    const double nu = ud.norm();
    const double nv = vd.norm();
    if (nu == 0.0 || nv == 0.0) {
        throw ValidationError("angular_distance: zero vector has no direction");
    }
    const double cosine = std::clamp(ud.dot(vd) / (nu * nv), -1.0, 1.0);
    return std::acos(cosine);
}

double dtw_distance(const FeatureSequence& x, const FeatureSequence& y) {
    if (x.dim() != y.dim()) throw ValidationError("dtw_distance: dimension mismatch");
    const Eigen::Index tx = x.length();
    const Eigen::Index ty = y.length();
    if (tx < 1 || ty < 1) throw ValidationError("dtw_distance: empty sequence");

    // Pairwise frame distances, then the usual DP over the cost matrix.
    Eigen::MatrixXd dist(tx, ty);
    for (Eigen::Index i = 0; i < tx; ++i) {
        for (Eigen::Index j = 0; j < ty; ++j) {
            dist(i, j) = angular_distance(x.frames.row(i), y.frames.row(j));
        }
    }

    Eigen::MatrixXd cost(tx, ty);
    // Backpointer codes: 0 = diagonal, 1 = (1,0) from (i-1,j), 2 = (0,1).
    Eigen::Matrix<std::int8_t, Eigen::Dynamic, Eigen::Dynamic> from(tx, ty);
    cost(0, 0) = dist(0, 0);
    from(0, 0) = -1;
    for (Eigen::Index i = 1; i < tx; ++i) {
        cost(i, 0) = cost(i - 1, 0) + dist(i, 0);
        from(i, 0) = 1;
    }
    for (Eigen::Index j = 1; j < ty; ++j) {
        cost(0, j) = cost(0, j - 1) + dist(0, j);
        from(0, j) = 2;
    }
    for (Eigen::Index i = 1; i < tx; ++i) {
        for (Eigen::Index j = 1; j < ty; ++j) {
            // Tie order: diagonal, then vertical, then horizontal.
            double best = cost(i - 1, j - 1);
            std::int8_t step = 0;
            if (cost(i - 1, j) < best) {
                best = cost(i - 1, j);
                step = 1;
            }
            if (cost(i, j - 1) < best) {
                best = cost(i, j - 1);
                step = 2;
            }
            cost(i, j) = best + dist(i, j);
            from(i, j) = step;
        }
    }

    // Path length via backpointers; the path includes both endpoints.
    Eigen::Index i = tx - 1, j = ty - 1;
    std::size_t path_len = 1;
    while (i != 0 || j != 0) {
        switch (from(i, j)) {
            case 0: --i; --j; break;
            case 1: --i; break;
            default: --j; break;
        }
        ++path_len;
    }
    return cost(tx - 1, ty - 1) / static_cast<double>(path_len);
}

std::vector<AbxTriplet> triplets_from_manifest(const EvalManifest& manifest) {
    std::map<std::string, std::vector<const EvalItem*>> groups;
    std::vector<std::string> group_order;
    for (const auto& item : manifest.items) {
        if (item.kind != ItemKind::Abx) continue;
        auto [it, inserted] = groups.try_emplace(item.group_id);
        if (inserted) group_order.push_back(item.group_id);
        it->second.push_back(&item);
    }
    std::vector<AbxTriplet> triplets;
    triplets.reserve(group_order.size());
    for (const auto& gid : group_order) {
        const auto& members = groups[gid];
        if (members.size() != 3) {
            throw ValidationError("abx group " + gid + " must have 3 items");
        }
        // The two members sharing a category are A then X in manifest order.
        const EvalItem* a = nullptr;
        const EvalItem* b = nullptr;
        const EvalItem* x = nullptr;
        for (int i = 0; i < 3; ++i) {
            const int j = (i + 1) % 3, k = (i + 2) % 3;
            if (members[j]->category_label == members[k]->category_label &&
                members[i]->category_label != members[j]->category_label) {
                b = members[i];
                a = members[std::min(j, k)];
                x = members[std::max(j, k)];
                break;
            }
        }
        if (!a) {
            throw ValidationError("abx group " + gid +
                                  " must have exactly two items sharing a category");
        }
        AbxTriplet t;
        t.a_ref = a->file_ref;
        t.b_ref = b->file_ref;
        t.x_ref = x->file_ref;
        t.category_a = a->category_label;
        t.category_b = b->category_label;
        t.speaker_a = a->speaker_id;
        t.speaker_b = b->speaker_id;
        t.speaker_x = x->speaker_id;
        triplets.push_back(std::move(t));
    }
    return triplets;
}

namespace {

bool matches_mode(const AbxTriplet& t, AbxMode mode) {
    if (t.speaker_a != t.speaker_b) return false;
    return mode == AbxMode::Within ? t.speaker_x == t.speaker_a : t.speaker_x != t.speaker_a;
}

std::string cell_key(const AbxTriplet& t, AbxMode mode) {
    const std::string cat_pair = t.category_a < t.category_b
                                     ? t.category_a + "|" + t.category_b
                                     : t.category_b + "|" + t.category_a;
    const std::string spk = mode == AbxMode::Within ? t.speaker_x
                                                    : t.speaker_a + ">" + t.speaker_x;
    return cat_pair + "|" + spk;
}

}  // namespace

AbxResult abx_error(const std::vector<AbxTriplet>& triplets, const FeatureLookup& features,
                    AbxMode mode) {
    std::vector<const AbxTriplet*> kept;
    for (const auto& t : triplets) {
        if (matches_mode(t, mode)) kept.push_back(&t);
    }
    if (kept.empty()) {
        throw ValidationError("no abx triplets match the requested speaker mode");
    }

    // Distinct (ref, ref) pairs are scored once, in parallel, into fixed
    // slots; the triplet loop below then reads cached values only.
    std::map<std::pair<std::string, std::string>, std::size_t> pair_index;
    std::vector<std::pair<const std::string*, const std::string*>> pairs;
    const auto intern = [&](const std::string& p, const std::string& q) {
        auto key = p <= q ? std::make_pair(p, q) : std::make_pair(q, p);
        const auto [it, inserted] = pair_index.try_emplace(std::move(key), pairs.size());
        if (inserted) pairs.emplace_back(&it->first.first, &it->first.second);
        return it->second;
    };
    struct TripletPairs {
        std::size_t ax, bx;
    };
    std::vector<TripletPairs> lookups;
    lookups.reserve(kept.size());
    for (const auto* t : kept) {
        lookups.push_back({intern(t->a_ref, t->x_ref), intern(t->b_ref, t->x_ref)});
    }
    std::vector<double> pair_dist(pairs.size());
    parallel_for(pairs.size(), [&](std::size_t i) {
        pair_dist[i] = dtw_distance(features(*pairs[i].first), features(*pairs[i].second));
    });

    std::map<std::string, std::pair<double, std::size_t>> cells;
    for (std::size_t i = 0; i < kept.size(); ++i) {
        const double d_ax = pair_dist[lookups[i].ax];
        const double d_bx = pair_dist[lookups[i].bx];
        const double score = d_ax < d_bx ? 0.0 : (d_ax > d_bx ? 1.0 : 0.5);
        auto& cell = cells[cell_key(*kept[i], mode)];
        cell.first += score;
        cell.second += 1;
    }

    AbxResult result;
    result.triplets_scored = kept.size();
    double cell_sum = 0.0;
    for (const auto& [key, acc] : cells) {
        const double mean = acc.first / static_cast<double>(acc.second);
        result.cells.emplace_back(key, mean, acc.second);
        cell_sum += mean;
    }
    result.error = cell_sum / static_cast<double>(cells.size());
    return result;
}

}  // namespace slm
