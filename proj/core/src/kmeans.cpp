#include "slm/kmeans.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "slm/error.hpp"
#include "slm/parallel.hpp"
#include "slm/rng.hpp"

namespace slm {

namespace {

using MatrixD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double squared_distance(const Eigen::Ref<const Eigen::RowVectorXd>& a,
                        const Eigen::Ref<const Eigen::RowVectorXd>& b) {
    return (a - b).squaredNorm();
}

// Nearest centroid with ties broken to the lowest index.
int nearest_centroid(const Eigen::Ref<const Eigen::RowVectorXd>& point, const MatrixD& centroids,
                     double* out_dist = nullptr) {
    int best = 0;
    double best_dist = squared_distance(point, centroids.row(0));
    for (int j = 1; j < centroids.rows(); ++j) {
        const double d = squared_distance(point, centroids.row(j));
        if (d < best_dist) {
            best_dist = d;
            best = j;
        }
    }
    if (out_dist) *out_dist = best_dist;
    return best;
}

// k-means++ seeding: first centroid uniform, the rest D^2-weighted.
MatrixD plusplus_init(const MatrixD& data, int k, Rng& rng) {
    const auto n = data.rows();
    MatrixD centroids(k, data.cols());
    centroids.row(0) = data.row(static_cast<Eigen::Index>(rng.uniform_int(n)));
    Eigen::VectorXd min_dist(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        min_dist(i) = squared_distance(data.row(i), centroids.row(0));
    }
    for (int j = 1; j < k; ++j) {
        const double total = min_dist.sum();
        Eigen::Index chosen;
        if (total <= 0.0) {
            // All remaining mass sits on already-chosen locations.
            chosen = static_cast<Eigen::Index>(rng.uniform_int(n));
        } else {
            double r = rng.uniform() * total;
            chosen = n - 1;
            for (Eigen::Index i = 0; i < n; ++i) {
                r -= min_dist(i);
                if (r <= 0.0) {
                    chosen = i;
                    break;
                }
            }
        }
        centroids.row(j) = data.row(chosen);
        for (Eigen::Index i = 0; i < n; ++i) {
            min_dist(i) = std::min(min_dist(i), squared_distance(data.row(i), centroids.row(j)));
        }
    }
    return centroids;
}

}  // namespace

Codebook kmeans_fit(const Eigen::Ref<const MatrixF>& data, int k, std::uint64_t seed,
                    const KmeansOptions& options, KmeansTrace* trace) {
    const auto n = data.rows();
    const auto dim = data.cols();
    if (n == 0 || dim == 0) throw ValidationError("kmeans: empty data");
    if (k < 1) throw ValidationError("kmeans: k must be >= 1");
    if (n < k) {
        throw ValidationError("kmeans: need at least k=" + std::to_string(k) + " points, got " +
                              std::to_string(n));
    }
    if (!data.allFinite()) throw ValidationError("kmeans: data contains non-finite values");

    const MatrixD points = data.cast<double>();
    Rng rng(seed);
    MatrixD centroids = plusplus_init(points, k, rng);

    std::vector<int> assignment(n, 0);
    std::vector<double> point_dist(n, 0.0);
    double inertia = 0.0;
    if (trace) *trace = KmeansTrace{};

    for (int iter = 0; iter < options.max_iters; ++iter) {
        // Assignment step, parallel over points; each slot written once.
        parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
            assignment[i] = nearest_centroid(points.row(static_cast<Eigen::Index>(i)), centroids,
                                             &point_dist[i]);
        });
        inertia = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) inertia += point_dist[i];
        if (trace) {
            trace->inertia.push_back(inertia);
            trace->iterations = iter + 1;
        }

        // Update step: fixed-order accumulation so worker count never
        // changes the result.
        MatrixD sums = MatrixD::Zero(k, dim);
        Eigen::VectorXi counts = Eigen::VectorXi::Zero(k);
        for (Eigen::Index i = 0; i < n; ++i) {
            sums.row(assignment[i]) += points.row(i);
            counts(assignment[i]) += 1;
        }
        MatrixD updated(k, dim);
        std::vector<int> empty_clusters;
        for (int j = 0; j < k; ++j) {
            if (counts(j) > 0) {
                updated.row(j) = sums.row(j) / counts(j);
            } else {
                updated.row(j) = centroids.row(j);
                empty_clusters.push_back(j);
            }
        }
        // Reseed each empty cluster to the point currently farthest from its
        // assigned centroid; under the old assignment the empty cluster holds
        // no points, so this cannot raise the objective.
        std::vector<char> taken(n, 0);
        for (const int j : empty_clusters) {
            Eigen::Index farthest = -1;
            double farthest_dist = -1.0;
            for (Eigen::Index i = 0; i < n; ++i) {
                if (taken[i]) continue;
                if (point_dist[i] > farthest_dist) {
                    farthest_dist = point_dist[i];
                    farthest = i;
                }
            }
            if (farthest < 0) break;
            taken[farthest] = 1;
            updated.row(j) = points.row(farthest);
            if (trace) trace->reseeded_clusters += 1;
        }

        const double prev_norm = centroids.norm();
        const double shift = (updated - centroids).norm() / (prev_norm + 1e-30);
        centroids = updated;
        if (shift < options.tol && empty_clusters.empty()) {
            if (trace) trace->converged = true;
            break;
        }
    }

    // Final assignment under the final centroids for the reported inertia.
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        assignment[i] =
            nearest_centroid(points.row(static_cast<Eigen::Index>(i)), centroids, &point_dist[i]);
    });
    inertia = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) inertia += point_dist[i];
    if (trace) trace->inertia.push_back(inertia);

    Codebook codebook;
    codebook.centroids = centroids.cast<float>();
    codebook.training_inertia = inertia;
    return codebook;
}

std::int32_t quantize_frame(const Eigen::Ref<const Eigen::RowVectorXf>& frame,
                            const Codebook& codebook) {
    if (frame.cols() != codebook.dim()) {
        throw ValidationError("quantize: frame dim " + std::to_string(frame.cols()) +
                              " does not match codebook dim " + std::to_string(codebook.dim()));
    }
    const Eigen::RowVectorXd p = frame.cast<double>();
    int best = 0;
    double best_dist = (p - codebook.centroids.row(0).cast<double>()).squaredNorm();
    for (Eigen::Index j = 1; j < codebook.size(); ++j) {
        const double d = (p - codebook.centroids.row(j).cast<double>()).squaredNorm();
        if (d < best_dist) {
            best_dist = d;
            best = static_cast<int>(j);
        }
    }
    return best;
}

UnitSequence quantize(const FeatureSequence& seq, const Codebook& codebook) {
    validate(seq);
    if (seq.dim() != codebook.dim()) {
        throw ValidationError("quantize: feature dim " + std::to_string(seq.dim()) +
                              " does not match codebook dim " + std::to_string(codebook.dim()));
    }
    UnitSequence units;
    units.vocab_size = static_cast<std::int32_t>(codebook.size());
    units.units.resize(seq.length());
    for (Eigen::Index t = 0; t < seq.length(); ++t) {
        units.units[static_cast<std::size_t>(t)] = quantize_frame(seq.frames.row(t), codebook);
    }
    return units;
}

FeatureSequence dequantize(const UnitSequence& units, const Codebook& codebook,
                           float frame_rate_hz) {
    validate(units);
    if (units.vocab_size > codebook.size()) {
        throw ValidationError("dequantize: unit vocab " + std::to_string(units.vocab_size) +
                              " exceeds codebook size " + std::to_string(codebook.size()));
    }
    FeatureSequence seq;
    seq.frame_rate_hz = frame_rate_hz;
    seq.frames.resize(static_cast<Eigen::Index>(units.length()), codebook.dim());
    for (std::size_t t = 0; t < units.length(); ++t) {
        seq.frames.row(static_cast<Eigen::Index>(t)) = codebook.centroids.row(units.units[t]);
    }
    return seq;
}

// ---------------------------------------------------------------------------
// Codebook file I/O

namespace {

constexpr std::array<char, 4> kCodebookMagic = {'Z', 'C', 'B', 'K'};
constexpr std::uint32_t kCodebookVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff),
                           static_cast<char>((v >> 24) & 0xff)};
    out.write(bytes, 4);
}

std::uint32_t get_u32(std::istream& in, const std::string& what) {
    unsigned char bytes[4];
    if (!in.read(reinterpret_cast<char*>(bytes), 4)) {
        throw CorruptionError("truncated while reading " + what);
    }
    return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
           (static_cast<std::uint32_t>(bytes[2]) << 16) |
           (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace

Codebook read_codebook(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::array<char, 4> magic;
    if (!in.read(magic.data(), 4) || magic != kCodebookMagic) {
        throw FormatError("not a codebook file (bad magic): " + path.string());
    }
    const std::uint32_t version = get_u32(in, "version");
    if (version != kCodebookVersion) {
        throw FormatError("unsupported codebook version " + std::to_string(version));
    }
    const std::uint32_t k = get_u32(in, "K");
    const std::uint32_t dim = get_u32(in, "D");
    if (k < 1 || dim < 1) throw CorruptionError("codebook declares empty shape");
    Codebook codebook;
    codebook.centroids.resize(k, dim);
    for (std::uint32_t j = 0; j < k; ++j) {
        for (std::uint32_t d = 0; d < dim; ++d) {
            const std::uint32_t bits = get_u32(in, "centroid payload");
            float v;
            std::memcpy(&v, &bits, 4);
            codebook.centroids(j, d) = v;
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw CorruptionError("trailing bytes after payload in " + path.string());
    }
    if (!codebook.centroids.allFinite()) {
        throw ValidationError("codebook contains non-finite centroids");
    }
    return codebook;
}

void write_codebook(const Codebook& codebook, const std::filesystem::path& path) {
    if (codebook.size() < 1 || codebook.dim() < 1) {
        throw ValidationError("cannot write empty codebook");
    }
    if (!codebook.centroids.allFinite()) {
        throw ValidationError("codebook contains non-finite centroids");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(kCodebookMagic.data(), 4);
    put_u32(out, kCodebookVersion);
    put_u32(out, static_cast<std::uint32_t>(codebook.size()));
    put_u32(out, static_cast<std::uint32_t>(codebook.dim()));
    for (Eigen::Index j = 0; j < codebook.size(); ++j) {
        for (Eigen::Index d = 0; d < codebook.dim(); ++d) {
            std::uint32_t bits;
            const float v = codebook.centroids(j, d);
            std::memcpy(&bits, &v, 4);
            put_u32(out, bits);
        }
    }
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace slm
