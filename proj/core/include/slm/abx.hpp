#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "slm/types.hpp"

namespace slm {

// arccos of the cosine similarity, clamped to [-1, 1] before arccos; result
// in [0, pi]. Zero vectors have no direction and are rejected.
double angular_distance(const Eigen::Ref<const Eigen::RowVectorXf>& u,
                        const Eigen::Ref<const Eigen::RowVectorXf>& v);

// Average angular distance along the minimum-total-cost monotone alignment
// path (steps (1,0), (0,1), (1,1)). Path recovery breaks ties preferring
// diagonal, then (1,0), then (0,1), so results are platform-deterministic.
double dtw_distance(const FeatureSequence& x, const FeatureSequence& y);

struct AbxTriplet {
    std::string a_ref, b_ref, x_ref;
    std::string category_a;  // = category(x)
    std::string category_b;
    std::string speaker_a, speaker_b, speaker_x;
};

enum class AbxMode { Within, Across };

// Groups manifest abx items into (A, B, X) triplets. Within a group the two
// items sharing a category are A (first in manifest order) and X; the
// remaining item is B.
std::vector<AbxTriplet> triplets_from_manifest(const EvalManifest& manifest);

struct AbxResult {
    double error = 0.0;
    std::size_t triplets_scored = 0;
    // cell -> (mean error, triplet count); cell = category pair x speaker
    // context. The overall error is the unweighted mean over cells.
    std::vector<std::tuple<std::string, double, std::size_t>> cells;
};

using FeatureLookup = std::function<const FeatureSequence&(const std::string& ref)>;

// Per triplet: 0 if d(a,x) < d(b,x), 1 if greater, 0.5 on an exact tie.
// Scores average within each (category-pair, speaker-context) cell, then
// across cells. Within keeps triplets whose three speakers match; Across
// keeps those where speaker(x) differs from speaker(a) = speaker(b).
AbxResult abx_error(const std::vector<AbxTriplet>& triplets, const FeatureLookup& features,
                    AbxMode mode);

}  // namespace slm
