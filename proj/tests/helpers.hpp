#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <string>
#include <unistd.h>

#include "slm/rng.hpp"
#include "slm/types.hpp"

namespace slm::test {

// Self-cleaning scratch directory under the system temp root.
struct TempDir {
    std::filesystem::path path;

    TempDir() {
        static std::atomic<int> counter{0};
        path = std::filesystem::temp_directory_path() /
               ("slmkit-test-" + std::to_string(::getpid()) + "-" +
                std::to_string(counter.fetch_add(1)));
        std::filesystem::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

inline FeatureSequence random_features(int rows, int cols, Rng& rng, float rate = 100.0f) {
    FeatureSequence seq;
    seq.frame_rate_hz = rate;
    seq.frames.resize(rows, cols);
    for (int t = 0; t < rows; ++t) {
        for (int d = 0; d < cols; ++d) seq.frames(t, d) = static_cast<float>(rng.normal());
    }
    return seq;
}

inline std::string read_file_bytes(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace slm::test
