#include "slm/io.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "slm/error.hpp"

namespace slm {

// ---------------------------------------------------------------------------
// Validation

void validate(const FeatureSequence& seq) {
    if (seq.frames.rows() < 1 || seq.frames.cols() < 1) {
        throw ValidationError("feature sequence must be at least 1x1, got " +
                              std::to_string(seq.frames.rows()) + "x" +
                              std::to_string(seq.frames.cols()));
    }
    if (!(seq.frame_rate_hz > 0.0f) || !std::isfinite(seq.frame_rate_hz)) {
        throw ValidationError("frame_rate_hz must be positive and finite");
    }
    if (!seq.frames.allFinite()) {
        throw ValidationError("feature sequence contains non-finite values");
    }
}

void validate(const UnitSequence& seq) {
    if (seq.units.empty()) throw ValidationError("unit sequence is empty");
    if (seq.vocab_size < 1) throw ValidationError("vocab_size must be >= 1");
    for (std::size_t t = 0; t < seq.units.size(); ++t) {
        if (seq.units[t] < 0 || seq.units[t] >= seq.vocab_size) {
            throw ValidationError("unit index " + std::to_string(seq.units[t]) +
                                  " at position " + std::to_string(t) +
                                  " out of range for vocab_size " +
                                  std::to_string(seq.vocab_size));
        }
    }
}

void validate(const PhoneAlignment& alignment) {
    if (alignment.labels.empty()) throw ValidationError("alignment is empty");
    if (alignment.phone_inventory.empty()) throw ValidationError("phone inventory is empty");
    const auto p = static_cast<std::int32_t>(alignment.phone_inventory.size());
    for (std::size_t t = 0; t < alignment.labels.size(); ++t) {
        if (alignment.labels[t] < 0 || alignment.labels[t] >= p) {
            throw ValidationError("phoneme id " + std::to_string(alignment.labels[t]) +
                                  " at frame " + std::to_string(t) +
                                  " out of range for inventory of " + std::to_string(p));
        }
    }
}

void validate_against(const PhoneAlignment& alignment, std::size_t sequence_length) {
    validate(alignment);
    if (alignment.labels.size() != sequence_length) {
        throw ValidationError("alignment length " + std::to_string(alignment.labels.size()) +
                              " does not match sequence length " +
                              std::to_string(sequence_length));
    }
}

std::string to_string(ItemKind kind) {
    switch (kind) {
        case ItemKind::Abx: return "abx";
        case ItemKind::PairA: return "pair_a";
        case ItemKind::PairB: return "pair_b";
        case ItemKind::Simi: return "simi";
    }
    throw ValidationError("unknown item kind");
}

ItemKind item_kind_from_string(const std::string& s) {
    if (s == "abx") return ItemKind::Abx;
    if (s == "pair_a") return ItemKind::PairA;
    if (s == "pair_b") return ItemKind::PairB;
    if (s == "simi") return ItemKind::Simi;
    throw ValidationError("unknown item kind: " + s);
}

void validate(const EvalManifest& manifest) {
    std::set<std::string> ids;
    std::map<std::string, std::vector<const EvalItem*>> groups;
    for (const auto& item : manifest.items) {
        if (item.item_id.empty()) throw ValidationError("manifest item with empty item_id");
        if (!ids.insert(item.item_id).second) {
            throw ValidationError("duplicate item_id in manifest: " + item.item_id);
        }
        if (item.file_ref.empty()) {
            throw ValidationError("item " + item.item_id + " has empty file_ref");
        }
        if (item.group_id.empty()) {
            throw ValidationError("item " + item.item_id + " has empty group_id");
        }
        if (item.human_score && !std::isfinite(*item.human_score)) {
            throw ValidationError("item " + item.item_id + " has non-finite human_score");
        }
        groups[item.group_id].push_back(&item);
    }
    // Pair groups hold one pair_a and one pair_b; other groups are uniform.
    const auto kind_class = [](ItemKind kind) {
        return kind == ItemKind::PairB ? ItemKind::PairA : kind;
    };
    for (const auto& [gid, members] : groups) {
        const ItemKind kind = members.front()->kind;
        for (const auto* m : members) {
            if (kind_class(m->kind) != kind_class(kind)) {
                throw ValidationError("group " + gid + " mixes item kinds");
            }
        }
        switch (kind) {
            case ItemKind::Abx:
                if (members.size() != 3) {
                    throw ValidationError("abx group " + gid + " must have 3 items, has " +
                                          std::to_string(members.size()));
                }
                break;
            case ItemKind::PairA:
            case ItemKind::PairB: {
                if (members.size() != 2) {
                    throw ValidationError("pair group " + gid + " must have 2 items");
                }
                int n_correct = 0;
                for (const auto* m : members) n_correct += (m->kind == ItemKind::PairA);
                if (n_correct != 1) {
                    throw ValidationError("pair group " + gid +
                                          " must have exactly one pair_a member");
                }
                break;
            }
            case ItemKind::Simi:
                if (members.size() != 2) {
                    throw ValidationError("simi group " + gid + " must have 2 items");
                }
                for (const auto* m : members) {
                    if (!m->human_score) {
                        throw ValidationError("simi item " + m->item_id +
                                              " is missing its human_score");
                    }
                }
                break;
        }
    }
}

void validate(const UtteranceManifest& manifest) {
    std::set<std::string> ids;
    for (const auto& e : manifest.entries) {
        if (e.utt_id.empty()) throw ValidationError("utterance with empty utt_id");
        if (!ids.insert(e.utt_id).second) {
            throw ValidationError("duplicate utt_id: " + e.utt_id);
        }
        if (e.feature_ref.empty()) {
            throw ValidationError("utterance " + e.utt_id + " has empty feature_ref");
        }
    }
}

// ---------------------------------------------------------------------------
// Little-endian binary primitives

namespace {

constexpr std::array<char, 4> kFeatureMagic = {'Z', 'F', 'E', 'A'};
constexpr std::uint32_t kFeatureVersion = 1;

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

void put_f32(std::ostream& out, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(out, bits);
}

float get_f32(std::istream& in, const std::string& what) {
    const std::uint32_t bits = get_u32(in, what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
}

void expect_eof(std::istream& in, const std::string& path) {
    if (in.peek() != std::char_traits<char>::eof()) {
        throw CorruptionError("trailing bytes after payload in " + path);
    }
}

std::ofstream open_out(const std::filesystem::path& path, std::ios::openmode mode) {
    std::ofstream out(path, mode);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    return out;
}

std::ifstream open_in(const std::filesystem::path& path, std::ios::openmode mode) {
    std::ifstream in(path, mode);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    return in;
}

}  // namespace

// ---------------------------------------------------------------------------
// Feature files

FeatureSequence read_features(const std::filesystem::path& path) {
    auto in = open_in(path, std::ios::binary);
    std::array<char, 4> magic;
    if (!in.read(magic.data(), 4) || magic != kFeatureMagic) {
        throw FormatError("not a feature file (bad magic): " + path.string());
    }
    const std::uint32_t version = get_u32(in, "version");
    if (version != kFeatureVersion) {
        throw FormatError("unsupported feature file version " + std::to_string(version) +
                          " in " + path.string());
    }
    const std::uint32_t rows = get_u32(in, "T");
    const std::uint32_t cols = get_u32(in, "D");
    const float rate = get_f32(in, "frame_rate_hz");
    if (rows < 1 || cols < 1) {
        throw CorruptionError("feature file declares empty shape: " + path.string());
    }
    FeatureSequence seq;
    seq.frame_rate_hz = rate;
    seq.frames.resize(rows, cols);
    for (std::uint32_t t = 0; t < rows; ++t) {
        for (std::uint32_t d = 0; d < cols; ++d) {
            seq.frames(t, d) = get_f32(in, "payload of " + path.string());
        }
    }
    expect_eof(in, path.string());
    validate(seq);
    return seq;
}

void write_features(const FeatureSequence& seq, const std::filesystem::path& path) {
    validate(seq);
    auto out = open_out(path, std::ios::binary | std::ios::trunc);
    out.write(kFeatureMagic.data(), 4);
    put_u32(out, kFeatureVersion);
    put_u32(out, static_cast<std::uint32_t>(seq.frames.rows()));
    put_u32(out, static_cast<std::uint32_t>(seq.frames.cols()));
    put_f32(out, seq.frame_rate_hz);
    for (Eigen::Index t = 0; t < seq.frames.rows(); ++t) {
        for (Eigen::Index d = 0; d < seq.frames.cols(); ++d) {
            put_f32(out, seq.frames(t, d));
        }
    }
    if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Unit files

UnitSequence read_units(const std::filesystem::path& path, std::int32_t vocab_size) {
    auto in = open_in(path, std::ios::in);
    UnitSequence seq;
    seq.vocab_size = vocab_size;
    std::string line;
    int utterances = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (++utterances > 1) {
            throw ValidationError("expected a single utterance in " + path.string());
        }
        std::istringstream tokens(line);
        std::string tok;
        while (tokens >> tok) {
            try {
                seq.units.push_back(static_cast<std::int32_t>(std::stol(tok)));
            } catch (const std::exception&) {
                throw CorruptionError("non-integer unit token '" + tok + "' in " +
                                      path.string());
            }
        }
    }
    if (utterances == 0) throw CorruptionError("no utterance line in " + path.string());
    validate(seq);
    return seq;
}

void write_units(const UnitSequence& seq, const std::filesystem::path& path) {
    validate(seq);
    auto out = open_out(path, std::ios::trunc);
    for (std::size_t t = 0; t < seq.units.size(); ++t) {
        if (t) out << ' ';
        out << seq.units[t];
    }
    out << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

std::int32_t read_vocab_sidecar(const std::filesystem::path& units_dir) {
    auto in = open_in(units_dir / "vocab.txt", std::ios::in);
    std::int64_t k = 0;
    if (!(in >> k) || k < 1) {
        throw CorruptionError("bad vocab sidecar in " + units_dir.string());
    }
    return static_cast<std::int32_t>(k);
}

void write_vocab_sidecar(const std::filesystem::path& units_dir, std::int32_t vocab_size) {
    auto out = open_out(units_dir / "vocab.txt", std::ios::trunc);
    out << vocab_size << '\n';
}

// ---------------------------------------------------------------------------
// Alignments

PhoneAlignment read_alignment(const std::filesystem::path& path,
                              const std::vector<std::string>& phone_inventory) {
    auto in = open_in(path, std::ios::in);
    PhoneAlignment alignment;
    alignment.phone_inventory = phone_inventory;
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (++lines > 1) throw ValidationError("expected a single utterance in " + path.string());
        std::istringstream tokens(line);
        std::string tok;
        while (tokens >> tok) {
            try {
                alignment.labels.push_back(static_cast<std::int32_t>(std::stol(tok)));
            } catch (const std::exception&) {
                throw CorruptionError("non-integer phoneme id '" + tok + "' in " +
                                      path.string());
            }
        }
    }
    if (lines == 0) throw CorruptionError("no alignment line in " + path.string());
    validate(alignment);
    return alignment;
}

void write_alignment(const PhoneAlignment& alignment, const std::filesystem::path& path) {
    validate(alignment);
    auto out = open_out(path, std::ios::trunc);
    for (std::size_t t = 0; t < alignment.labels.size(); ++t) {
        if (t) out << ' ';
        out << alignment.labels[t];
    }
    out << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

std::vector<std::string> read_phone_inventory(const std::filesystem::path& path) {
    auto in = open_in(path, std::ios::in);
    std::vector<std::string> inventory;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) inventory.push_back(line);
    }
    if (inventory.empty()) throw CorruptionError("empty phone inventory: " + path.string());
    return inventory;
}

void write_phone_inventory(const std::vector<std::string>& inventory,
                           const std::filesystem::path& path) {
    auto out = open_out(path, std::ios::trunc);
    for (const auto& name : inventory) out << name << '\n';
}

// ---------------------------------------------------------------------------
// Manifests (TSV)

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> cells;
    std::string::size_type start = 0;
    for (;;) {
        const auto tab = line.find('\t', start);
        if (tab == std::string::npos) {
            cells.push_back(line.substr(start));
            break;
        }
        cells.push_back(line.substr(start, tab - start));
        start = tab + 1;
    }
    return cells;
}

std::string format_score(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

const char* kManifestHeader =
    "item_id\tfile_ref\tkind\tspeaker_id\tcategory_label\tgroup_id\tsubset_name\thuman_score";

}  // namespace

EvalManifest read_manifest(const std::filesystem::path& path) {
    auto in = open_in(path, std::ios::in);
    std::string header;
    if (!std::getline(in, header)) {
        throw CorruptionError("manifest has no header row: " + path.string());
    }
    const auto names = split_tabs(header);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < names.size(); ++i) col[names[i]] = i;
    for (const char* required :
         {"item_id", "file_ref", "kind", "speaker_id", "category_label", "group_id",
          "subset_name", "human_score"}) {
        if (!col.count(required)) {
            throw FormatError("manifest " + path.string() + " is missing column " + required);
        }
    }
    EvalManifest manifest;
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto cells = split_tabs(line);
        if (cells.size() != names.size()) {
            throw CorruptionError("manifest " + path.string() + ":" + std::to_string(lineno) +
                                  " has " + std::to_string(cells.size()) + " cells, expected " +
                                  std::to_string(names.size()));
        }
        EvalItem item;
        item.item_id = cells[col["item_id"]];
        item.file_ref = cells[col["file_ref"]];
        item.kind = item_kind_from_string(cells[col["kind"]]);
        item.speaker_id = cells[col["speaker_id"]];
        item.category_label = cells[col["category_label"]];
        item.group_id = cells[col["group_id"]];
        item.subset_name = cells[col["subset_name"]];
        const std::string& score = cells[col["human_score"]];
        if (!score.empty()) {
            try {
                item.human_score = std::stod(score);
            } catch (const std::exception&) {
                throw CorruptionError("bad human_score '" + score + "' in " + path.string());
            }
        }
        manifest.items.push_back(std::move(item));
    }
    validate(manifest);
    return manifest;
}

void write_manifest(const EvalManifest& manifest, const std::filesystem::path& path) {
    validate(manifest);
    auto out = open_out(path, std::ios::trunc);
    out << kManifestHeader << '\n';
    for (const auto& item : manifest.items) {
        out << item.item_id << '\t' << item.file_ref << '\t' << to_string(item.kind) << '\t'
            << item.speaker_id << '\t' << item.category_label << '\t' << item.group_id << '\t'
            << item.subset_name << '\t'
            << (item.human_score ? format_score(*item.human_score) : std::string()) << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

UtteranceManifest read_utterances(const std::filesystem::path& path) {
    auto in = open_in(path, std::ios::in);
    std::string header;
    if (!std::getline(in, header)) {
        throw CorruptionError("utterance manifest has no header: " + path.string());
    }
    if (header != "utt_id\tfeature_ref\talign_ref\tspeaker_id") {
        throw FormatError("unexpected utterance manifest header in " + path.string());
    }
    UtteranceManifest manifest;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto cells = split_tabs(line);
        if (cells.size() != 4) {
            throw CorruptionError("bad utterance row in " + path.string());
        }
        manifest.entries.push_back({cells[0], cells[1], cells[2], cells[3]});
    }
    validate(manifest);
    return manifest;
}

void write_utterances(const UtteranceManifest& manifest, const std::filesystem::path& path) {
    validate(manifest);
    auto out = open_out(path, std::ios::trunc);
    out << "utt_id\tfeature_ref\talign_ref\tspeaker_id\n";
    for (const auto& e : manifest.entries) {
        out << e.utt_id << '\t' << e.feature_ref << '\t' << e.align_ref << '\t' << e.speaker_id
            << '\n';
    }
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace slm
