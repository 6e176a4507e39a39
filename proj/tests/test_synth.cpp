#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "slm/abx.hpp"
#include "slm/error.hpp"
#include "slm/io.hpp"
#include "slm/synth.hpp"

using namespace slm;
using test::TempDir;

namespace {

CorpusSpec tiny_spec(std::uint64_t seed = 1) {
    CorpusSpec spec;
    spec.phones = 6;
    spec.dim = 5;
    spec.speakers = 3;
    spec.lexicon_words = 12;
    spec.word_len_min = 2;
    spec.word_len_max = 4;
    spec.grammar_branching = 3;
    spec.train_utterances = 30;
    spec.dev_utterances = 6;
    spec.test_utterances = 6;
    spec.sentence_words_min = 2;
    spec.sentence_words_max = 4;
    spec.abx_items_dev = 8;
    spec.abx_items_test = 4;
    spec.word_pairs_dev = 8;
    spec.word_pairs_test = 4;
    spec.accept_pairs_dev = 8;
    spec.accept_pairs_test = 4;
    spec.simi_pairs_dev = 8;
    spec.simi_pairs_test = 8;
    spec.seed = seed;
    return spec;
}

}  // namespace

TEST_CASE("noise-free single-phone utterance emits exact emission means") {
    Rng rng(61);
    PhoneModel phones = make_phone_model(4, 3, 0.0, 2, 2, rng);
    SpeakerModel speakers = make_speaker_model(2, 3, 0.0, rng);
    const std::vector<std::string> inventory = {"p00", "p01", "p02", "p03"};
    const auto [features, alignment] =
        generate_utterance(phones, speakers, {0}, 0, 42, inventory, 100.0f);
    REQUIRE(features.length() == 2);
    CHECK(alignment.labels == std::vector<std::int32_t>{0, 0});
    for (int t = 0; t < 2; ++t) {
        CHECK((features.frames.row(t).cast<double>() - phones.emission_means.row(0)).norm() <
              1e-6);
    }
    CHECK(features.frames.row(0) == features.frames.row(1));
}

TEST_CASE("utterance generation is deterministic in the seed") {
    Rng rng(62);
    PhoneModel phones = make_phone_model(5, 4, 0.3, 2, 5, rng);
    SpeakerModel speakers = make_speaker_model(3, 4, 1.0, rng);
    const std::vector<std::string> inventory = {"a", "b", "c", "d", "e"};
    const auto [f1, a1] = generate_utterance(phones, speakers, {1, 3, 2}, 1, 7, inventory, 100.0f);
    const auto [f2, a2] = generate_utterance(phones, speakers, {1, 3, 2}, 1, 7, inventory, 100.0f);
    CHECK(f1.frames == f2.frames);
    CHECK(a1.labels == a2.labels);
    const auto [f3, a3] = generate_utterance(phones, speakers, {1, 3, 2}, 1, 8, inventory, 100.0f);
    CHECK(f1.frames != f3.frames);

    SUBCASE("unknown phoneme id is rejected") {
        CHECK_THROWS_AS(generate_utterance(phones, speakers, {9}, 0, 1, inventory, 100.0f),
                        ValidationError);
    }
}

TEST_CASE("paired renditions from one seed differ only at the edited phoneme") {
    Rng rng(63);
    PhoneModel phones = make_phone_model(5, 4, 0.2, 2, 4, rng);
    SpeakerModel speakers = make_speaker_model(2, 4, 0.5, rng);
    const std::vector<std::string> inventory = {"a", "b", "c", "d", "e"};
    const std::vector<int> word = {1, 2, 3};
    const std::vector<int> foil = {1, 4, 3};
    const auto [fw, aw] = generate_utterance(phones, speakers, word, 0, 99, inventory, 100.0f);
    const auto [ff, af] = generate_utterance(phones, speakers, foil, 0, 99, inventory, 100.0f);
    REQUIRE(fw.length() == ff.length());
    for (Eigen::Index t = 0; t < fw.length(); ++t) {
        if (aw.labels[static_cast<std::size_t>(t)] == 2) {
            CHECK(af.labels[static_cast<std::size_t>(t)] == 4);
            CHECK((fw.frames.row(t) - ff.frames.row(t)).norm() > 1e-6);
        } else {
            CHECK(fw.frames.row(t) == ff.frames.row(t));
        }
    }
}

TEST_CASE("lexicon invariants: foils are non-words, grammar reaches every word") {
    Rng rng(64);
    const ToyLexicon lexicon = make_lexicon(30, 2, 4, 8, 4, rng);
    REQUIRE(lexicon.words.size() == 30);
    REQUIRE(lexicon.nonwords.size() == 30);
    std::set<std::vector<int>> words(lexicon.words.begin(), lexicon.words.end());
    for (std::size_t i = 0; i < lexicon.nonwords.size(); ++i) {
        CHECK(!words.count(lexicon.nonwords[i]));
        CHECK(lexicon.nonwords[i].size() == lexicon.words[i].size());
        int diff = 0;
        for (std::size_t j = 0; j < lexicon.words[i].size(); ++j) {
            diff += lexicon.words[i][j] != lexicon.nonwords[i][j];
        }
        CHECK(diff == 1);
    }
    // Reachability from word 0 over the successor graph.
    std::set<int> reached = {0};
    std::vector<int> frontier = {0};
    while (!frontier.empty()) {
        const int w = frontier.back();
        frontier.pop_back();
        for (const int next : lexicon.successors[static_cast<std::size_t>(w)]) {
            if (reached.insert(next).second) frontier.push_back(next);
        }
    }
    CHECK(reached.size() == 30);
}

TEST_CASE("generated corpus has consistent files, manifests and gold alignments") {
    TempDir tmp;
    const CorpusSpec spec = tiny_spec();
    const CorpusSummary summary = generate_corpus(spec, tmp.path);
    CHECK(summary.utterances_written > 0);

    const auto inventory = read_phone_inventory(tmp.path / "alignments" / "phones.txt");
    CHECK(static_cast<int>(inventory.size()) == spec.phones);

    const UtteranceManifest train = read_utterances(tmp.path / "manifests" / "train.tsv");
    REQUIRE(static_cast<int>(train.entries.size()) == spec.train_utterances);
    for (const auto& entry : train.entries) {
        const FeatureSequence features =
            read_features(tmp.path / (entry.feature_ref + ".zfea"));
        const PhoneAlignment alignment =
            read_alignment(tmp.path / (entry.align_ref + ".algn"), inventory);
        REQUIRE(alignment.length() == static_cast<std::size_t>(features.length()));
        CHECK(features.dim() == spec.dim);
        CHECK(features.frame_rate_hz == spec.frame_rate_hz);
    }

    SUBCASE("abx groups are same-speaker triples with the middle phoneme swapped") {
        const EvalManifest abx = read_manifest(tmp.path / "manifests" / "abx_dev.tsv");
        REQUIRE(static_cast<int>(abx.items.size()) == 3 * spec.abx_items_dev);
        std::map<std::string, std::vector<const EvalItem*>> groups;
        for (const auto& item : abx.items) groups[item.group_id].push_back(&item);
        for (const auto& [gid, members] : groups) {
            REQUIRE(members.size() == 3);
            CHECK(members[0]->speaker_id == members[1]->speaker_id);
            CHECK(members[0]->speaker_id == members[2]->speaker_id);
        }
        const auto triplets = triplets_from_manifest(abx);
        CHECK(triplets.size() == static_cast<std::size_t>(spec.abx_items_dev));
    }

    SUBCASE("word pairs share their speaker and frame count") {
        const EvalManifest words = read_manifest(tmp.path / "manifests" / "words_dev.tsv");
        std::map<std::string, std::vector<const EvalItem*>> groups;
        for (const auto& item : words.items) groups[item.group_id].push_back(&item);
        for (const auto& [gid, members] : groups) {
            REQUIRE(members.size() == 2);
            CHECK(members[0]->speaker_id == members[1]->speaker_id);
            const auto fa = read_features(tmp.path / (members[0]->file_ref + ".zfea"));
            const auto fb = read_features(tmp.path / (members[1]->file_ref + ".zfea"));
            CHECK(fa.length() == fb.length());
        }
    }

    SUBCASE("simi pairs carry the edit-distance surrogate score") {
        const EvalManifest simi = read_manifest(tmp.path / "manifests" / "simi_dev.tsv");
        for (const auto& item : simi.items) {
            REQUIRE(item.human_score.has_value());
            CHECK(*item.human_score >= 0.0);
            CHECK(*item.human_score <= 1.0);
        }
        std::set<std::string> domains;
        for (const auto& item : simi.items) {
            domains.insert(item.subset_name.substr(0, item.subset_name.find('/')));
        }
        CHECK(static_cast<int>(domains.size()) == spec.simi_domains);
    }
}

TEST_CASE("zero similarity pairs yield an empty simi manifest, others populated") {
    TempDir tmp;
    CorpusSpec spec = tiny_spec();
    spec.simi_pairs_dev = 0;
    spec.simi_pairs_test = 0;
    generate_corpus(spec, tmp.path);
    const EvalManifest simi = read_manifest(tmp.path / "manifests" / "simi_dev.tsv");
    CHECK(simi.items.empty());
    const EvalManifest words = read_manifest(tmp.path / "manifests" / "words_dev.tsv");
    CHECK(!words.items.empty());
}

TEST_CASE("corpus generation is byte-deterministic across runs") {
    TempDir a, b;
    const CorpusSpec spec = tiny_spec(77);
    generate_corpus(spec, a.path);
    generate_corpus(spec, b.path);
    // Compare every emitted file.
    std::vector<std::filesystem::path> rel;
    for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path)) {
        if (entry.is_regular_file()) {
            rel.push_back(std::filesystem::relative(entry.path(), a.path));
        }
    }
    REQUIRE(!rel.empty());
    for (const auto& r : rel) {
        REQUIRE(test::read_file_bytes(a.path / r) == test::read_file_bytes(b.path / r));
    }
}

TEST_CASE("infeasible configs are rejected before generation") {
    CorpusSpec spec = tiny_spec();
    spec.lexicon_words = 1;
    CHECK_THROWS_AS(spec.validate(), ConfigError);

    spec = tiny_spec();
    spec.simi_pairs_dev = 3;  // fewer than 2 per subset across 4 subsets
    CHECK_THROWS_AS(spec.validate(), ConfigError);

    spec = tiny_spec();
    spec.grammar_branching = spec.lexicon_words;
    CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("noise-free corpus has zero ABX error") {
    TempDir tmp;
    CorpusSpec spec = tiny_spec(5);
    spec.emission_scale = 0.0;
    generate_corpus(spec, tmp.path);
    const EvalManifest manifest = read_manifest(tmp.path / "manifests" / "abx_dev.tsv");
    const auto triplets = triplets_from_manifest(manifest);
    std::map<std::string, FeatureSequence> cache;
    for (const auto& item : manifest.items) {
        cache.emplace(item.file_ref, read_features(tmp.path / (item.file_ref + ".zfea")));
    }
    const auto lookup = [&](const std::string& ref) -> const FeatureSequence& {
        return cache.at(ref);
    };
    const AbxResult result = abx_error(triplets, lookup, AbxMode::Within);
    CHECK(result.error == doctest::Approx(0.0));
}
