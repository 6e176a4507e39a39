#include <doctest.h>

#include "helpers.hpp"
#include "slm/error.hpp"
#include "slm/kmeans.hpp"

using namespace slm;
using test::TempDir;

namespace {

MatrixF two_blobs(int per_blob, int dim, double separation, double sigma, Rng& rng,
                  Eigen::RowVectorXf* mean_a = nullptr, Eigen::RowVectorXf* mean_b = nullptr) {
    MatrixF data(2 * per_blob, dim);
    Eigen::RowVectorXf a = Eigen::RowVectorXf::Zero(dim);
    Eigen::RowVectorXf b = Eigen::RowVectorXf::Zero(dim);
    a(0) = static_cast<float>(-separation / 2);
    b(0) = static_cast<float>(separation / 2);
    for (int i = 0; i < per_blob; ++i) {
        for (int d = 0; d < dim; ++d) {
            data(i, d) = a(d) + static_cast<float>(sigma * rng.normal());
            data(per_blob + i, d) = b(d) + static_cast<float>(sigma * rng.normal());
        }
    }
    if (mean_a) *mean_a = a;
    if (mean_b) *mean_b = b;
    return data;
}

// Exhaustive best 2-partition by inertia; the independent oracle for K=2.
double best_two_partition_inertia(const MatrixF& data) {
    const auto n = data.rows();
    REQUIRE(n <= 16);
    double best = std::numeric_limits<double>::infinity();
    for (std::uint32_t mask = 1; mask + 1 < (1u << n); ++mask) {
        Eigen::RowVectorXd sum_a = Eigen::RowVectorXd::Zero(data.cols());
        Eigen::RowVectorXd sum_b = Eigen::RowVectorXd::Zero(data.cols());
        int na = 0, nb = 0;
        for (Eigen::Index i = 0; i < n; ++i) {
            if (mask & (1u << i)) {
                sum_a += data.row(i).cast<double>();
                ++na;
            } else {
                sum_b += data.row(i).cast<double>();
                ++nb;
            }
        }
        const Eigen::RowVectorXd ca = sum_a / na;
        const Eigen::RowVectorXd cb = sum_b / nb;
        double inertia = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::RowVectorXd p = data.row(i).cast<double>();
            inertia += (mask & (1u << i)) ? (p - ca).squaredNorm() : (p - cb).squaredNorm();
        }
        best = std::min(best, inertia);
    }
    return best;
}

}  // namespace

TEST_CASE("k=1 gives the data mean and the total squared deviation") {
    Rng rng(11);
    MatrixF data(20, 3);
    for (int i = 0; i < 20; ++i) {
        for (int d = 0; d < 3; ++d) data(i, d) = static_cast<float>(rng.normal());
    }
    const Codebook cb = kmeans_fit(data, 1, 5);
    const Eigen::RowVectorXd mean = data.cast<double>().colwise().mean();
    CHECK((cb.centroids.row(0).cast<double>() - mean).norm() < 1e-9);

    double expected = 0.0;
    for (int i = 0; i < 20; ++i) {
        expected += (data.row(i).cast<double>() - mean).squaredNorm();
    }
    CHECK(cb.training_inertia == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("k=N distinct points gives zero inertia") {
    Rng rng(12);
    MatrixF data(8, 2);
    for (int i = 0; i < 8; ++i) {
        data(i, 0) = static_cast<float>(i);
        data(i, 1) = static_cast<float>(rng.normal());
    }
    const Codebook cb = kmeans_fit(data, 8, 3);
    CHECK(cb.training_inertia == doctest::Approx(0.0));
}

TEST_CASE("two separated blobs match the brute-force optimal 2-partition") {
    Rng rng(13);
    const MatrixF data = two_blobs(6, 3, 8.0, 0.3, rng);  // N = 12
    const double oracle = best_two_partition_inertia(data);
    KmeansTrace trace;
    const Codebook cb = kmeans_fit(data, 2, 17, {}, &trace);
    CHECK(cb.training_inertia == doctest::Approx(oracle).epsilon(1e-9));
}

TEST_CASE("blob centroids land within the sampling error of the true means") {
    Rng rng(14);
    const int per_blob = 200;
    const double sigma = 0.5;
    Eigen::RowVectorXf mean_a, mean_b;
    const MatrixF data = two_blobs(per_blob, 4, 10.0, sigma, rng, &mean_a, &mean_b);
    const Codebook cb = kmeans_fit(data, 2, 19);
    const double bound = 3.0 * sigma / std::sqrt(static_cast<double>(per_blob)) *
                         std::sqrt(4.0);  // per-dim bound aggregated over D dims
    double best_a = std::numeric_limits<double>::infinity();
    double best_b = std::numeric_limits<double>::infinity();
    for (int j = 0; j < 2; ++j) {
        best_a = std::min(best_a, double((cb.centroids.row(j) - mean_a).norm()));
        best_b = std::min(best_b, double((cb.centroids.row(j) - mean_b).norm()));
    }
    CHECK(best_a < bound);
    CHECK(best_b < bound);
}

TEST_CASE("inertia is non-increasing and assignments are nearest-centroid optimal") {
    Rng rng(15);
    for (int seed = 0; seed < 10; ++seed) {
        MatrixF data(60, 4);
        for (int i = 0; i < 60; ++i) {
            for (int d = 0; d < 4; ++d) data(i, d) = static_cast<float>(rng.normal());
        }
        KmeansTrace trace;
        const Codebook cb = kmeans_fit(data, 7, static_cast<std::uint64_t>(seed), {}, &trace);
        for (std::size_t i = 1; i < trace.inertia.size(); ++i) {
            REQUIRE(trace.inertia[i] <= trace.inertia[i - 1] + 1e-9);
        }
        // Nearest-centroid optimality of the final assignment.
        FeatureSequence seq;
        seq.frames = data;
        const UnitSequence assigned = quantize(seq, cb);
        for (Eigen::Index i = 0; i < data.rows(); ++i) {
            const double own = (data.row(i).cast<double>() -
                                cb.centroids.row(assigned.units[i]).cast<double>())
                                   .squaredNorm();
            for (Eigen::Index j = 0; j < cb.size(); ++j) {
                REQUIRE(own <= (data.row(i).cast<double>() - cb.centroids.row(j).cast<double>())
                                       .squaredNorm() +
                                   1e-12);
            }
        }
    }
}

TEST_CASE("same seed gives byte-identical codebooks") {
    TempDir tmp;
    Rng rng(16);
    MatrixF data(100, 5);
    for (int i = 0; i < 100; ++i) {
        for (int d = 0; d < 5; ++d) data(i, d) = static_cast<float>(rng.normal());
    }
    write_codebook(kmeans_fit(data, 9, 1234), tmp.path / "a.zcbk");
    write_codebook(kmeans_fit(data, 9, 1234), tmp.path / "b.zcbk");
    CHECK(test::read_file_bytes(tmp.path / "a.zcbk") ==
          test::read_file_bytes(tmp.path / "b.zcbk"));
    write_codebook(kmeans_fit(data, 9, 1235), tmp.path / "c.zcbk");
    CHECK(test::read_file_bytes(tmp.path / "a.zcbk") !=
          test::read_file_bytes(tmp.path / "c.zcbk"));
}

TEST_CASE("quantize maps frames to nearest centroids with ties to the lowest index") {
    Codebook cb;
    cb.centroids.resize(5, 2);
    cb.centroids << 0, 0, /* 1 */ 2, 0, /* 2 */ 5, 5, /* 3 */ -3, 1, /* 4 */ 4, 0;
    FeatureSequence seq;
    seq.frames.resize(3, 2);
    seq.frames << -3, 1,  // exactly centroid 3
        3, 0,             // equidistant to centroids 1 and 4 -> 1
        0.1f, 0.1f;       // near centroid 0
    const UnitSequence units = quantize(seq, cb);
    CHECK(units.units[0] == 3);
    CHECK(units.units[1] == 1);
    CHECK(units.units[2] == 0);

    SUBCASE("dimension mismatch is rejected") {
        FeatureSequence bad;
        bad.frames.resize(2, 3);
        bad.frames.setOnes();
        CHECK_THROWS_AS(quantize(bad, cb), ValidationError);
    }
}

TEST_CASE("dequantize looks up centroids and round trips through quantize") {
    Rng rng(17);
    Codebook cb;
    cb.centroids.resize(6, 3);
    for (int j = 0; j < 6; ++j) {
        for (int d = 0; d < 3; ++d) cb.centroids(j, d) = static_cast<float>(rng.normal());
    }
    UnitSequence units;
    units.vocab_size = 6;
    units.units = {0, 0};
    const FeatureSequence two = dequantize(units, cb, 100.0f);
    CHECK(two.length() == 2);
    CHECK(two.frames.row(0) == cb.centroids.row(0));
    CHECK(two.frames.row(1) == cb.centroids.row(0));

    UnitSequence one;
    one.vocab_size = 6;
    one.units = {4};
    CHECK(dequantize(one, cb, 100.0f).length() == 1);

    // quantize(dequantize(u)) == u whenever centroids are distinct.
    for (int trial = 0; trial < 20; ++trial) {
        UnitSequence u;
        u.vocab_size = 6;
        const int len = 1 + static_cast<int>(rng.uniform_int(30));
        for (int t = 0; t < len; ++t) {
            u.units.push_back(static_cast<std::int32_t>(rng.uniform_int(6)));
        }
        const UnitSequence back = quantize(dequantize(u, cb, 100.0f), cb);
        REQUIRE(back.units == u.units);
    }

    SUBCASE("out-of-range index is rejected") {
        UnitSequence bad;
        bad.vocab_size = 9;
        bad.units = {8};
        CHECK_THROWS_AS(dequantize(bad, cb, 100.0f), ValidationError);
    }
}

TEST_CASE("fit input validation") {
    MatrixF data(3, 2);
    data.setZero();
    CHECK_THROWS_AS(kmeans_fit(data, 4, 1), ValidationError);  // N < K
    CHECK_THROWS_AS(kmeans_fit(MatrixF(), 1, 1), ValidationError);
    data(0, 0) = std::numeric_limits<float>::infinity();
    CHECK_THROWS_AS(kmeans_fit(data, 2, 1), ValidationError);
}

TEST_CASE("codebook file round trip") {
    TempDir tmp;
    Rng rng(18);
    Codebook cb;
    cb.centroids.resize(4, 3);
    for (int j = 0; j < 4; ++j) {
        for (int d = 0; d < 3; ++d) cb.centroids(j, d) = static_cast<float>(rng.normal());
    }
    write_codebook(cb, tmp.path / "c.zcbk");
    const Codebook back = read_codebook(tmp.path / "c.zcbk");
    CHECK(back.centroids == cb.centroids);
}
