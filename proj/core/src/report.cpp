#include "slm/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "slm/error.hpp"

namespace slm {

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void Report::add_param(const std::string& key, const std::string& value) {
    params.emplace_back(key, value);
}

void Report::add_param(const std::string& key, std::int64_t value) {
    params.emplace_back(key, std::to_string(value));
}

void Report::add_param(const std::string& key, double value) {
    params.emplace_back(key, format_number(value));
}

void Report::write_text(std::ostream& out) const {
    out << metric << " = " << format_number(value) << '\n';
    if (!breakdown.empty()) {
        out << "breakdown:\n";
        for (const auto& [name, v, weight] : breakdown) {
            out << "  " << name << " = " << format_number(v) << "  (n=" << format_number(weight)
                << ")\n";
        }
    }
    auto sorted = params;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    if (!sorted.empty()) {
        out << "config:\n";
        for (const auto& [key, v] : sorted) out << "  " << key << " = " << v << '\n';
    }
    for (const auto& note : notes) out << "note: " << note << '\n';
}

void Report::write(const std::filesystem::path& stem) const {
    {
        std::ofstream out(stem.string() + ".txt", std::ios::trunc);
        if (!out) throw IoError("cannot write report: " + stem.string() + ".txt");
        write_text(out);
    }
    std::ofstream out(stem.string() + ".tsv", std::ios::trunc);
    if (!out) throw IoError("cannot write report: " + stem.string() + ".tsv");
    out << "metric\t" << metric << '\t' << format_number(value) << '\n';
    for (const auto& [name, v, weight] : breakdown) {
        out << "subset\t" << name << '\t' << format_number(v) << '\t' << format_number(weight)
            << '\n';
    }
    auto sorted = params;
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (const auto& [key, v] : sorted) out << "param\t" << key << '\t' << v << '\n';
    for (const auto& note : notes) out << "note\t" << note << '\n';
    if (!out) throw IoError("write failed: " + stem.string() + ".tsv");
}

}  // namespace slm
