#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "slm/config.hpp"
#include "slm/rng.hpp"
#include "slm/types.hpp"

namespace slm {

// Emission model: each phoneme is a D-dimensional mean; a phoneme occupies
// d ~ U[duration_min, duration_max] consecutive frames of
// mean + speaker offset + N(0, emission_scale^2) noise.
struct PhoneModel {
    Eigen::MatrixXd emission_means;  // P x D
    double emission_scale = 0.1;
    int duration_min = 2;
    int duration_max = 5;

    int phones() const { return static_cast<int>(emission_means.rows()); }
    int dim() const { return static_cast<int>(emission_means.cols()); }
};

// Additive per-speaker offset vectors: the linguistically irrelevant signal
// that quantization can strip.
struct SpeakerModel {
    Eigen::MatrixXd offsets;  // S x D
    double offset_scale = 1.0;

    int speakers() const { return static_cast<int>(offsets.rows()); }
};

// Words are phoneme-id strings; each word has a minimal-edit non-word foil
// (one substituted phoneme, not itself a word). The grammar is a word-bigram
// successor relation in which every word is reachable.
struct ToyLexicon {
    std::vector<std::vector<int>> words;
    std::vector<std::vector<int>> nonwords;
    std::vector<std::vector<int>> successors;
};

PhoneModel make_phone_model(int phones, int dim, double emission_scale, int duration_min,
                            int duration_max, Rng& rng);
SpeakerModel make_speaker_model(int speakers, int dim, double offset_scale, Rng& rng);
ToyLexicon make_lexicon(int words, int len_min, int len_max, int phones, int branching,
                        Rng& rng);

// Deterministic given the seed. Paired items re-use one seed so duration and
// noise draws stay aligned position-for-position and the two renditions
// differ only where their phone strings differ.
std::pair<FeatureSequence, PhoneAlignment> generate_utterance(
    const PhoneModel& phones, const SpeakerModel& speakers, const std::vector<int>& phone_string,
    int speaker_id, std::uint64_t seed, const std::vector<std::string>& inventory,
    float frame_rate_hz);

// Corpus generation knobs; from_config reads the documented keys and
// validate() rejects infeasible requests before anything is written.
struct CorpusSpec {
    int phones = 20;
    int dim = 16;
    int speakers = 8;
    double emission_scale = 0.1;
    double speaker_scale = 1.0;
    int duration_min = 2;
    int duration_max = 5;
    int lexicon_words = 200;
    int word_len_min = 3;
    int word_len_max = 6;
    int grammar_branching = 4;
    int train_utterances = 2000;
    int dev_utterances = 200;
    int test_utterances = 200;
    int sentence_words_min = 3;
    int sentence_words_max = 8;
    int abx_items_dev = 300;
    int abx_items_test = 300;
    int word_pairs_dev = 300;
    int word_pairs_test = 300;
    int accept_pairs_dev = 300;
    int accept_pairs_test = 300;
    int simi_pairs_dev = 120;
    int simi_pairs_test = 120;
    int simi_domains = 2;
    int simi_subsets_per_domain = 2;
    float frame_rate_hz = 100.0f;
    std::uint64_t seed = 1;

    static CorpusSpec from_config(const Config& config);
    Config to_config() const;
    void validate() const;
};

struct CorpusSummary {
    std::filesystem::path root;
    std::size_t utterances_written = 0;
    std::size_t eval_items_written = 0;
};

// Emits features/, alignments/ (with phones.txt), manifests/ with train/dev/
// test splits and the four evaluation manifests (x dev/test), plus a
// corpus.cfg echo of the resolved spec. Every emitted byte is a function of
// (spec, spec.seed); per-utterance sub-seeds make parallel generation
// byte-identical to serial.
CorpusSummary generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir);

}  // namespace slm
