#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "slm/types.hpp"

namespace slm {

// K x D centroid matrix, the discretization bottleneck.
struct Codebook {
    MatrixF centroids;
    double training_inertia = 0.0;

    Eigen::Index size() const { return centroids.rows(); }
    Eigen::Index dim() const { return centroids.cols(); }
};

struct KmeansOptions {
    int max_iters = 100;
    // Stop when the relative centroid shift (Frobenius norm of the update
    // over the norm of the previous centroids) drops below tol.
    double tol = 1e-6;
};

// Per-iteration diagnostics; inertia is non-increasing across entries.
struct KmeansTrace {
    std::vector<double> inertia;
    int iterations = 0;
    bool converged = false;
    int reseeded_clusters = 0;
};

// Lloyd's algorithm with k-means++ initialization. Deterministic given
// (data, k, seed); N >= k required. Empty clusters are reseeded to the point
// farthest from its assigned centroid so all k clusters stay live.
Codebook kmeans_fit(const Eigen::Ref<const MatrixF>& data, int k, std::uint64_t seed,
                    const KmeansOptions& options = {}, KmeansTrace* trace = nullptr);

// Nearest centroid per frame, Euclidean distance, ties to the lowest index.
UnitSequence quantize(const FeatureSequence& seq, const Codebook& codebook);
std::int32_t quantize_frame(const Eigen::Ref<const Eigen::RowVectorXf>& frame,
                            const Codebook& codebook);

// Centroid lookup; frame t = centroids[units[t]].
FeatureSequence dequantize(const UnitSequence& units, const Codebook& codebook,
                           float frame_rate_hz);

// Codebook file: magic "ZCBK", u32 version=1, u32 K, u32 D, then K*D f32
// little-endian values. training_inertia is a fit-time diagnostic and is not
// persisted; read_codebook leaves it at zero.
Codebook read_codebook(const std::filesystem::path& path);
void write_codebook(const Codebook& codebook, const std::filesystem::path& path);

}  // namespace slm
