#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace slm {

// Row-major so frame t is contiguous and file payloads serialize in frame
// order without a transpose.
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// T x D matrix of continuous frame features at a fixed frame rate. The rate
// travels with the data so 100 Hz and 50 Hz pipelines cannot be silently
// mixed. Immutable by convention after construction; safe to share read-only.
struct FeatureSequence {
    MatrixF frames;
    float frame_rate_hz = 100.0f;

    Eigen::Index length() const { return frames.rows(); }
    Eigen::Index dim() const { return frames.cols(); }
};

// Throws ValidationError unless T >= 1, D >= 1, all values finite and
// frame_rate_hz > 0.
void validate(const FeatureSequence& seq);

// Length-T sequence of codebook indices in [0, vocab_size).
struct UnitSequence {
    std::vector<std::int32_t> units;
    std::int32_t vocab_size = 0;

    std::size_t length() const { return units.size(); }
};

void validate(const UnitSequence& seq);

// Frame-level gold phoneme labels, aligned 1:1 with a feature or unit
// sequence of the same length.
struct PhoneAlignment {
    std::vector<std::int32_t> labels;
    std::vector<std::string> phone_inventory;

    std::size_t length() const { return labels.size(); }
};

void validate(const PhoneAlignment& alignment);
// Checks the 1:1 frame alignment against the sequence it annotates.
void validate_against(const PhoneAlignment& alignment, std::size_t sequence_length);

enum class ItemKind { Abx, PairA, PairB, Simi };

std::string to_string(ItemKind kind);
ItemKind item_kind_from_string(const std::string& s);

// One labeled evaluation item. file_ref is a path relative to the corpus
// root (without extension; loaders append the format suffix).
struct EvalItem {
    std::string item_id;
    std::string file_ref;
    ItemKind kind = ItemKind::Abx;
    std::string speaker_id;
    std::string category_label;
    std::string group_id;
    std::string subset_name;
    std::optional<double> human_score;
};

struct EvalManifest {
    std::vector<EvalItem> items;
};

// item_ids unique; pair members share a group_id with exactly one PairA and
// one PairB; simi groups have two members and a human score.
void validate(const EvalManifest& manifest);

// One row of a train/dev/test utterance listing.
struct UtteranceEntry {
    std::string utt_id;
    std::string feature_ref;
    std::string align_ref;
    std::string speaker_id;
};

struct UtteranceManifest {
    std::vector<UtteranceEntry> entries;
};

void validate(const UtteranceManifest& manifest);

}  // namespace slm
