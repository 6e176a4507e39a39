#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

namespace slm {

// Metric result plus everything needed to reproduce it: per-subset
// breakdown, resolved parameters and seeds. Writers are deterministic
// (fixed formatting, sorted parameters, no timestamps) so identical runs
// emit identical bytes.
struct Report {
    std::string metric;
    double value = 0.0;
    // name, value, weight (subset size or cell count)
    std::vector<std::tuple<std::string, double, double>> breakdown;
    std::vector<std::pair<std::string, std::string>> params;
    std::vector<std::string> notes;

    void add_param(const std::string& key, const std::string& value);
    void add_param(const std::string& key, std::int64_t value);
    void add_param(const std::string& key, double value);

    void write_text(std::ostream& out) const;
    // Two files: <stem>.txt (pretty) and <stem>.tsv (machine-readable).
    void write(const std::filesystem::path& stem) const;
};

std::string format_number(double v);

}  // namespace slm
