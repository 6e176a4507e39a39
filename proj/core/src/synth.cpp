#include "slm/synth.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "slm/error.hpp"
#include "slm/io.hpp"
#include "slm/parallel.hpp"

namespace slm {

PhoneModel make_phone_model(int phones, int dim, double emission_scale, int duration_min,
                            int duration_max, Rng& rng) {
    if (phones < 2 || dim < 1) throw ConfigError("phone model needs phones >= 2 and dim >= 1");
    if (duration_min < 1 || duration_max < duration_min) {
        throw ConfigError("phone model needs 1 <= duration_min <= duration_max");
    }
    if (emission_scale < 0.0) throw ConfigError("emission_scale must be >= 0");
    PhoneModel model;
    model.emission_scale = emission_scale;
    model.duration_min = duration_min;
    model.duration_max = duration_max;
    model.emission_means.resize(phones, dim);
    for (int p = 0; p < phones; ++p) {
        for (int d = 0; d < dim; ++d) model.emission_means(p, d) = rng.normal();
    }
    for (int p = 0; p < phones; ++p) {
        if (model.emission_means.row(p).norm() == 0.0) {
            throw ValidationError("degenerate zero emission mean");
        }
        for (int q = p + 1; q < phones; ++q) {
            if ((model.emission_means.row(p) - model.emission_means.row(q)).norm() == 0.0) {
                throw ValidationError("emission means are not pairwise distinct");
            }
        }
    }
    return model;
}

SpeakerModel make_speaker_model(int speakers, int dim, double offset_scale, Rng& rng) {
    if (speakers < 2) throw ConfigError("speaker model needs speakers >= 2");
    if (offset_scale < 0.0) throw ConfigError("speaker_scale must be >= 0");
    SpeakerModel model;
    model.offset_scale = offset_scale;
    model.offsets.resize(speakers, dim);
    for (int s = 0; s < speakers; ++s) {
        for (int d = 0; d < dim; ++d) model.offsets(s, d) = offset_scale * rng.normal();
    }
    return model;
}

ToyLexicon make_lexicon(int words, int len_min, int len_max, int phones, int branching,
                        Rng& rng) {
    if (words < 2) throw ConfigError("lexicon needs at least 2 words");
    if (len_min < 1 || len_max < len_min) throw ConfigError("bad word length range");
    if (phones < 2) throw ConfigError("lexicon needs at least 2 phonemes");
    if (branching < 1 || branching >= words) {
        throw ConfigError("grammar_branching must be in [1, words)");
    }
    ToyLexicon lexicon;
    std::set<std::vector<int>> seen;
    int attempts = 0;
    while (static_cast<int>(lexicon.words.size()) < words) {
        if (++attempts > words * 1000) {
            throw ConfigError("cannot draw " + std::to_string(words) +
                              " distinct words from this phone inventory");
        }
        const int len = len_min + static_cast<int>(rng.uniform_int(len_max - len_min + 1));
        std::vector<int> word(static_cast<std::size_t>(len));
        for (auto& p : word) p = static_cast<int>(rng.uniform_int(phones));
        if (seen.insert(word).second) lexicon.words.push_back(std::move(word));
    }

    // One minimal-edit foil per word: substitute a single phoneme so the
    // result is not itself a word.
    for (const auto& word : lexicon.words) {
        std::vector<int> foil;
        for (int tries = 0; tries < 1000; ++tries) {
            foil = word;
            const auto pos = rng.uniform_int(word.size());
            const int old_phone = foil[pos];
            int new_phone = static_cast<int>(rng.uniform_int(phones));
            if (new_phone == old_phone) new_phone = (new_phone + 1) % phones;
            foil[pos] = new_phone;
            if (!seen.count(foil)) break;
            foil.clear();
        }
        if (foil.empty()) {
            throw ConfigError("cannot construct a non-word foil; inventory too dense");
        }
        lexicon.nonwords.push_back(std::move(foil));
    }

    // Bigram grammar: a ring through every word keeps the graph strongly
    // connected, extra random successors add branching.
    lexicon.successors.resize(static_cast<std::size_t>(words));
    for (int w = 0; w < words; ++w) {
        std::set<int> next;
        next.insert((w + 1) % words);
        while (static_cast<int>(next.size()) < branching) {
            const int candidate = static_cast<int>(rng.uniform_int(words));
            if (candidate != w) next.insert(candidate);
        }
        lexicon.successors[static_cast<std::size_t>(w)].assign(next.begin(), next.end());
    }
    return lexicon;
}

std::pair<FeatureSequence, PhoneAlignment> generate_utterance(
    const PhoneModel& phones, const SpeakerModel& speakers, const std::vector<int>& phone_string,
    int speaker_id, std::uint64_t seed, const std::vector<std::string>& inventory,
    float frame_rate_hz) {
    if (phone_string.empty()) throw ValidationError("empty phone string");
    if (speaker_id < 0 || speaker_id >= speakers.speakers()) {
        throw ValidationError("speaker id out of range");
    }
    for (const int p : phone_string) {
        if (p < 0 || p >= phones.phones()) {
            throw ValidationError("unknown phoneme id " + std::to_string(p));
        }
    }
    Rng rng(seed);
    const int dim = phones.dim();
    const Eigen::RowVectorXd offset = speakers.offsets.row(speaker_id);

    std::vector<Eigen::RowVectorXd> frames;
    PhoneAlignment alignment;
    alignment.phone_inventory = inventory;
    // Draw order is fixed per position (duration, then frame noise), so two
    // renditions from one seed stay aligned even when a phoneme differs.
    for (const int p : phone_string) {
        const int span = phones.duration_max == phones.duration_min
                             ? phones.duration_min
                             : phones.duration_min +
                                   static_cast<int>(rng.uniform_int(
                                       phones.duration_max - phones.duration_min + 1));
        for (int f = 0; f < span; ++f) {
            Eigen::RowVectorXd frame = phones.emission_means.row(p) + offset;
            for (int d = 0; d < dim; ++d) frame(d) += phones.emission_scale * rng.normal();
            frames.push_back(std::move(frame));
            alignment.labels.push_back(p);
        }
    }

    FeatureSequence seq;
    seq.frame_rate_hz = frame_rate_hz;
    seq.frames.resize(static_cast<Eigen::Index>(frames.size()), dim);
    for (std::size_t t = 0; t < frames.size(); ++t) {
        seq.frames.row(static_cast<Eigen::Index>(t)) = frames[t].cast<float>();
    }
    return {std::move(seq), std::move(alignment)};
}

// ---------------------------------------------------------------------------
// Corpus spec

CorpusSpec CorpusSpec::from_config(const Config& c) {
    CorpusSpec s;
    s.phones = static_cast<int>(c.get_int("phones", s.phones));
    s.dim = static_cast<int>(c.get_int("dim", s.dim));
    s.speakers = static_cast<int>(c.get_int("speakers", s.speakers));
    s.emission_scale = c.get_double("emission_scale", s.emission_scale);
    s.speaker_scale = c.get_double("speaker_scale", s.speaker_scale);
    s.duration_min = static_cast<int>(c.get_int("duration_min", s.duration_min));
    s.duration_max = static_cast<int>(c.get_int("duration_max", s.duration_max));
    s.lexicon_words = static_cast<int>(c.get_int("lexicon_words", s.lexicon_words));
    s.word_len_min = static_cast<int>(c.get_int("word_len_min", s.word_len_min));
    s.word_len_max = static_cast<int>(c.get_int("word_len_max", s.word_len_max));
    s.grammar_branching = static_cast<int>(c.get_int("grammar_branching", s.grammar_branching));
    s.train_utterances = static_cast<int>(c.get_int("train_utterances", s.train_utterances));
    s.dev_utterances = static_cast<int>(c.get_int("dev_utterances", s.dev_utterances));
    s.test_utterances = static_cast<int>(c.get_int("test_utterances", s.test_utterances));
    s.sentence_words_min = static_cast<int>(c.get_int("sentence_words_min", s.sentence_words_min));
    s.sentence_words_max = static_cast<int>(c.get_int("sentence_words_max", s.sentence_words_max));
    s.abx_items_dev = static_cast<int>(c.get_int("abx_items_dev", s.abx_items_dev));
    s.abx_items_test = static_cast<int>(c.get_int("abx_items_test", s.abx_items_test));
    s.word_pairs_dev = static_cast<int>(c.get_int("word_pairs_dev", s.word_pairs_dev));
    s.word_pairs_test = static_cast<int>(c.get_int("word_pairs_test", s.word_pairs_test));
    s.accept_pairs_dev = static_cast<int>(c.get_int("accept_pairs_dev", s.accept_pairs_dev));
    s.accept_pairs_test = static_cast<int>(c.get_int("accept_pairs_test", s.accept_pairs_test));
    s.simi_pairs_dev = static_cast<int>(c.get_int("simi_pairs_dev", s.simi_pairs_dev));
    s.simi_pairs_test = static_cast<int>(c.get_int("simi_pairs_test", s.simi_pairs_test));
    s.simi_domains = static_cast<int>(c.get_int("simi_domains", s.simi_domains));
    s.simi_subsets_per_domain =
        static_cast<int>(c.get_int("simi_subsets_per_domain", s.simi_subsets_per_domain));
    s.frame_rate_hz = static_cast<float>(c.get_double("frame_rate_hz", s.frame_rate_hz));
    s.seed = static_cast<std::uint64_t>(c.get_int("seed", static_cast<std::int64_t>(s.seed)));
    s.validate();
    return s;
}

Config CorpusSpec::to_config() const {
    Config c;
    const auto set_int = [&](const char* k, std::int64_t v) { c.set(k, std::to_string(v)); };
    const auto set_double = [&](const char* k, double v) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        c.set(k, buf);
    };
    set_int("phones", phones);
    set_int("dim", dim);
    set_int("speakers", speakers);
    set_double("emission_scale", emission_scale);
    set_double("speaker_scale", speaker_scale);
    set_int("duration_min", duration_min);
    set_int("duration_max", duration_max);
    set_int("lexicon_words", lexicon_words);
    set_int("word_len_min", word_len_min);
    set_int("word_len_max", word_len_max);
    set_int("grammar_branching", grammar_branching);
    set_int("train_utterances", train_utterances);
    set_int("dev_utterances", dev_utterances);
    set_int("test_utterances", test_utterances);
    set_int("sentence_words_min", sentence_words_min);
    set_int("sentence_words_max", sentence_words_max);
    set_int("abx_items_dev", abx_items_dev);
    set_int("abx_items_test", abx_items_test);
    set_int("word_pairs_dev", word_pairs_dev);
    set_int("word_pairs_test", word_pairs_test);
    set_int("accept_pairs_dev", accept_pairs_dev);
    set_int("accept_pairs_test", accept_pairs_test);
    set_int("simi_pairs_dev", simi_pairs_dev);
    set_int("simi_pairs_test", simi_pairs_test);
    set_int("simi_domains", simi_domains);
    set_int("simi_subsets_per_domain", simi_subsets_per_domain);
    set_double("frame_rate_hz", frame_rate_hz);
    set_int("seed", static_cast<std::int64_t>(seed));
    return c;
}

void CorpusSpec::validate() const {
    if (phones < 2) throw ConfigError("phones must be >= 2");
    if (dim < 1) throw ConfigError("dim must be >= 1");
    if (speakers < 2) throw ConfigError("speakers must be >= 2");
    if (duration_min < 1 || duration_max < duration_min) {
        throw ConfigError("bad duration range");
    }
    if (lexicon_words < 2) throw ConfigError("lexicon_words must be >= 2");
    if (word_len_min < 1 || word_len_max < word_len_min) {
        throw ConfigError("bad word length range");
    }
    if (grammar_branching < 1 || grammar_branching >= lexicon_words) {
        throw ConfigError("grammar_branching must be in [1, lexicon_words)");
    }
    if (train_utterances < 1 || dev_utterances < 1 || test_utterances < 1) {
        throw ConfigError("split sizes must be >= 1");
    }
    if (sentence_words_min < 2 || sentence_words_max < sentence_words_min) {
        throw ConfigError("sentences need at least 2 words and a sane range");
    }
    if (abx_items_dev < 0 || abx_items_test < 0 || word_pairs_dev < 0 ||
        word_pairs_test < 0 || accept_pairs_dev < 0 || accept_pairs_test < 0 ||
        simi_pairs_dev < 0 || simi_pairs_test < 0) {
        throw ConfigError("evaluation item counts must be >= 0");
    }
    if (simi_domains < 1 || simi_subsets_per_domain < 1) {
        throw ConfigError("simi_domains and simi_subsets_per_domain must be >= 1");
    }
    const int simi_cells = simi_domains * simi_subsets_per_domain;
    for (const int count : {simi_pairs_dev, simi_pairs_test}) {
        if (count != 0 && count < 2 * simi_cells) {
            throw ConfigError("similarity needs >= 2 pairs per subset (requested " +
                              std::to_string(count) + " across " + std::to_string(simi_cells) +
                              " subsets)");
        }
    }
    if (!(frame_rate_hz > 0.0f)) throw ConfigError("frame_rate_hz must be positive");
}

// ---------------------------------------------------------------------------
// Corpus generation

namespace {

struct UtteranceJob {
    std::string utt_id;
    std::vector<int> phone_string;
    int speaker = 0;
    std::uint64_t seed = 0;
};

std::vector<int> sample_sentence(const ToyLexicon& lexicon, int words_min, int words_max,
                                 Rng& rng, std::vector<int>* word_ids = nullptr) {
    const int n_words =
        words_min + static_cast<int>(rng.uniform_int(words_max - words_min + 1));
    std::vector<int> sentence;
    int word = static_cast<int>(rng.uniform_int(lexicon.words.size()));
    for (int i = 0; i < n_words; ++i) {
        if (word_ids) word_ids->push_back(word);
        const auto& phones = lexicon.words[static_cast<std::size_t>(word)];
        sentence.insert(sentence.end(), phones.begin(), phones.end());
        const auto& next = lexicon.successors[static_cast<std::size_t>(word)];
        word = next[rng.uniform_int(next.size())];
    }
    return sentence;
}

bool is_legal(const std::vector<int>& word_ids, const ToyLexicon& lexicon) {
    for (std::size_t i = 0; i + 1 < word_ids.size(); ++i) {
        const auto& next = lexicon.successors[static_cast<std::size_t>(word_ids[i])];
        if (std::find(next.begin(), next.end(), word_ids[i + 1]) == next.end()) return false;
    }
    return true;
}

std::vector<int> concat_words(const std::vector<int>& word_ids, const ToyLexicon& lexicon) {
    std::vector<int> phones;
    for (const int w : word_ids) {
        const auto& word = lexicon.words[static_cast<std::size_t>(w)];
        phones.insert(phones.end(), word.begin(), word.end());
    }
    return phones;
}

std::size_t edit_distance(const std::vector<int>& a, const std::vector<int>& b) {
    const std::size_t n = a.size(), m = b.size();
    std::vector<std::size_t> prev(m + 1), cur(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= n; ++i) {
        cur[0] = i;
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
        }
        std::swap(prev, cur);
    }
    return prev[m];
}

std::string phone_label(const std::vector<int>& phones) {
    std::string label;
    for (std::size_t i = 0; i < phones.size(); ++i) {
        if (i) label += '-';
        label += std::to_string(phones[i]);
    }
    return label;
}

std::string zero_pad(int value, int width) {
    std::string s = std::to_string(value);
    while (static_cast<int>(s.size()) < width) s.insert(s.begin(), '0');
    return s;
}

}  // namespace

CorpusSummary generate_corpus(const CorpusSpec& spec, const std::filesystem::path& out_dir) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir / "features");
    fs::create_directories(out_dir / "alignments");
    fs::create_directories(out_dir / "manifests");

    Rng root(spec.seed);
    Rng model_rng = root.fork(0);
    const PhoneModel phones = make_phone_model(spec.phones, spec.dim, spec.emission_scale,
                                               spec.duration_min, spec.duration_max, model_rng);
    const SpeakerModel speakers =
        make_speaker_model(spec.speakers, spec.dim, spec.speaker_scale, model_rng);
    Rng lexicon_rng = root.fork(1);
    const ToyLexicon lexicon =
        make_lexicon(spec.lexicon_words, spec.word_len_min, spec.word_len_max, spec.phones,
                     spec.grammar_branching, lexicon_rng);

    std::vector<std::string> inventory;
    inventory.reserve(static_cast<std::size_t>(spec.phones));
    for (int p = 0; p < spec.phones; ++p) inventory.push_back("p" + zero_pad(p, 2));
    write_phone_inventory(inventory, out_dir / "alignments" / "phones.txt");

    std::vector<UtteranceJob> jobs;
    // Disjoint sub-seed streams per item family; paired items share one
    // rendition seed drawn from the pair stream.
    const std::uint64_t solo_base = mix_seed(spec.seed, 11);
    const std::uint64_t pair_base = mix_seed(spec.seed, 12);
    std::uint64_t solo_stream = 0;
    std::uint64_t pair_stream = 0;
    const auto enqueue = [&](std::string utt_id, std::vector<int> phone_string, int speaker) {
        jobs.push_back({std::move(utt_id), std::move(phone_string), speaker,
                        mix_seed(solo_base, solo_stream++)});
    };

    // Train/dev/test sentences: grammar walks, speakers round-robin so every
    // speaker has enough utterances for probing splits.
    Rng sentence_rng = root.fork(2);
    UtteranceManifest train_manifest, dev_manifest, test_manifest;
    const auto make_split = [&](const std::string& prefix, int count,
                                UtteranceManifest& manifest) {
        for (int i = 0; i < count; ++i) {
            const std::string utt_id = prefix + zero_pad(i, 5);
            const int speaker = i % spec.speakers;
            manifest.entries.push_back({utt_id, "features/" + utt_id,
                                        "alignments/" + utt_id, "spk" + zero_pad(speaker, 2)});
            enqueue(utt_id,
                    sample_sentence(lexicon, spec.sentence_words_min, spec.sentence_words_max,
                                    sentence_rng),
                    speaker);
        }
    };
    make_split("train", spec.train_utterances, train_manifest);
    make_split("dev", spec.dev_utterances, dev_manifest);
    make_split("test", spec.test_utterances, test_manifest);

    // ABX triphone triplets: A and X are two renditions of the same triphone,
    // B substitutes the middle phoneme; one speaker per group.
    Rng abx_rng = root.fork(3);
    const auto make_abx = [&](const std::string& prefix, int count, EvalManifest& manifest) {
        for (int i = 0; i < count; ++i) {
            const int speaker = static_cast<int>(abx_rng.uniform_int(spec.speakers));
            const int left = static_cast<int>(abx_rng.uniform_int(spec.phones));
            const int mid = static_cast<int>(abx_rng.uniform_int(spec.phones));
            const int right = static_cast<int>(abx_rng.uniform_int(spec.phones));
            int other = static_cast<int>(abx_rng.uniform_int(spec.phones));
            if (other == mid) other = (other + 1) % spec.phones;
            const std::vector<int> triphone_a = {left, mid, right};
            const std::vector<int> triphone_b = {left, other, right};
            const std::string group = prefix + zero_pad(i, 5);
            const std::string spk = "spk" + zero_pad(speaker, 2);
            const char suffix[3] = {'a', 'b', 'x'};
            const std::vector<int>* strings[3] = {&triphone_a, &triphone_b, &triphone_a};
            for (int m = 0; m < 3; ++m) {
                EvalItem item;
                item.item_id = group + suffix[m];
                item.file_ref = "features/" + item.item_id;
                item.kind = ItemKind::Abx;
                item.speaker_id = spk;
                item.category_label = phone_label(*strings[m]);
                item.group_id = group;
                item.subset_name = "triphone";
                manifest.items.push_back(item);
                enqueue(item.item_id, *strings[m], speaker);
            }
        }
    };

    // Spot-the-word pairs: a word against its minimal-edit foil, same
    // speaker, shared rendition seed so the two members differ only at the
    // edited phoneme.
    Rng word_rng = root.fork(4);
    const int len_split = (spec.word_len_min + spec.word_len_max) / 2;
    const auto make_word_pairs = [&](const std::string& prefix, int count,
                                     EvalManifest& manifest) {
        for (int i = 0; i < count; ++i) {
            const auto w = word_rng.uniform_int(lexicon.words.size());
            const int speaker = static_cast<int>(word_rng.uniform_int(spec.speakers));
            const std::string group = prefix + zero_pad(i, 5);
            const std::string spk = "spk" + zero_pad(speaker, 2);
            const std::uint64_t rendition_seed = mix_seed(pair_base, pair_stream++);
            const std::string subset =
                static_cast<int>(lexicon.words[w].size()) <= len_split ? "short" : "long";
            const std::vector<int>* strings[2] = {&lexicon.words[w], &lexicon.nonwords[w]};
            const ItemKind kinds[2] = {ItemKind::PairA, ItemKind::PairB};
            const char suffix[2] = {'a', 'b'};
            for (int m = 0; m < 2; ++m) {
                EvalItem item;
                item.item_id = group + suffix[m];
                item.file_ref = "features/" + item.item_id;
                item.kind = kinds[m];
                item.speaker_id = spk;
                item.category_label = phone_label(*strings[m]);
                item.group_id = group;
                item.subset_name = subset;
                manifest.items.push_back(item);
                jobs.push_back({item.item_id, *strings[m], speaker, rendition_seed});
            }
        }
    };

    // Acceptability pairs: a grammar walk against an adjacent-swap corruption
    // that breaks at least one bigram; shared rendition seed keeps lengths
    // equal.
    Rng accept_rng = root.fork(5);
    const auto make_accept_pairs = [&](const std::string& prefix, int count,
                                       EvalManifest& manifest) {
        for (int i = 0; i < count; ++i) {
            std::vector<int> word_ids;
            std::vector<int> swapped;
            bool found = false;
            for (int tries = 0; tries < 200 && !found; ++tries) {
                word_ids.clear();
                sample_sentence(lexicon, spec.sentence_words_min, spec.sentence_words_max,
                                accept_rng, &word_ids);
                for (int attempt = 0; attempt < 50; ++attempt) {
                    const auto j = accept_rng.uniform_int(word_ids.size() - 1);
                    swapped = word_ids;
                    std::swap(swapped[j], swapped[j + 1]);
                    if (!is_legal(swapped, lexicon)) {
                        found = true;
                        break;
                    }
                }
            }
            if (!found) {
                throw ConfigError(
                    "grammar too permissive: adjacent swaps never break legality");
            }
            const int speaker = static_cast<int>(accept_rng.uniform_int(spec.speakers));
            const std::string group = prefix + zero_pad(i, 5);
            const std::string spk = "spk" + zero_pad(speaker, 2);
            const std::uint64_t rendition_seed = mix_seed(pair_base, pair_stream++);
            const std::vector<int> legal_phones = concat_words(word_ids, lexicon);
            const std::vector<int> illegal_phones = concat_words(swapped, lexicon);
            const std::vector<int>* strings[2] = {&legal_phones, &illegal_phones};
            const ItemKind kinds[2] = {ItemKind::PairA, ItemKind::PairB};
            const char suffix[2] = {'a', 'b'};
            for (int m = 0; m < 2; ++m) {
                EvalItem item;
                item.item_id = group + suffix[m];
                item.file_ref = "features/" + item.item_id;
                item.kind = kinds[m];
                item.speaker_id = spk;
                item.category_label = std::to_string(word_ids.size()) + "w";
                item.group_id = group;
                item.subset_name = "sentences";
                manifest.items.push_back(item);
                jobs.push_back({item.item_id, *strings[m], speaker, rendition_seed});
            }
        }
    };

    // Similarity pairs: two distinct words; the synthetic judgment is
    // 1 - normalized phoneme edit distance, so a perfect scorer reaches
    // PCC = 1 by construction.
    Rng simi_rng = root.fork(6);
    const auto make_simi_pairs = [&](const std::string& prefix, int count,
                                     EvalManifest& manifest) {
        for (int i = 0; i < count; ++i) {
            const auto w1 = simi_rng.uniform_int(lexicon.words.size());
            auto w2 = simi_rng.uniform_int(lexicon.words.size());
            if (w2 == w1) w2 = (w2 + 1) % lexicon.words.size();
            const int speaker = static_cast<int>(simi_rng.uniform_int(spec.speakers));
            const auto& a = lexicon.words[w1];
            const auto& b = lexicon.words[w2];
            const double dist = static_cast<double>(edit_distance(a, b)) /
                                static_cast<double>(std::max(a.size(), b.size()));
            const double human = 1.0 - dist;
            const int domain = i % spec.simi_domains;
            const int sub = (i / spec.simi_domains) % spec.simi_subsets_per_domain;
            const std::string subset = "d" + std::to_string(domain) + "/s" + std::to_string(sub);
            const std::string group = prefix + zero_pad(i, 5);
            const std::string spk = "spk" + zero_pad(speaker, 2);
            const std::vector<int>* strings[2] = {&a, &b};
            const char suffix[2] = {'a', 'b'};
            for (int m = 0; m < 2; ++m) {
                EvalItem item;
                item.item_id = group + suffix[m];
                item.file_ref = "features/" + item.item_id;
                item.kind = ItemKind::Simi;
                item.speaker_id = spk;
                item.category_label = phone_label(*strings[m]);
                item.group_id = group;
                item.subset_name = subset;
                item.human_score = human;
                manifest.items.push_back(item);
                enqueue(item.item_id, *strings[m], speaker);
            }
        }
    };

    EvalManifest abx_dev, abx_test, words_dev, words_test, accept_dev, accept_test, simi_dev,
        simi_test;
    make_abx("abxd", spec.abx_items_dev, abx_dev);
    make_abx("abxt", spec.abx_items_test, abx_test);
    make_word_pairs("wordd", spec.word_pairs_dev, words_dev);
    make_word_pairs("wordt", spec.word_pairs_test, words_test);
    make_accept_pairs("acceptd", spec.accept_pairs_dev, accept_dev);
    make_accept_pairs("acceptt", spec.accept_pairs_test, accept_test);
    make_simi_pairs("simid", spec.simi_pairs_dev, simi_dev);
    make_simi_pairs("simit", spec.simi_pairs_test, simi_test);

    // Generation is parallel per utterance; each job owns its sub-seed and
    // its own output files, so worker count cannot change a single byte.
    parallel_for(jobs.size(), [&](std::size_t i) {
        const UtteranceJob& job = jobs[i];
        auto [features, alignment] = generate_utterance(
            phones, speakers, job.phone_string, job.speaker, job.seed, inventory,
            spec.frame_rate_hz);
        write_features(features, out_dir / "features" / (job.utt_id + ".zfea"));
        write_alignment(alignment, out_dir / "alignments" / (job.utt_id + ".algn"));
    });

    write_utterances(train_manifest, out_dir / "manifests" / "train.tsv");
    write_utterances(dev_manifest, out_dir / "manifests" / "dev.tsv");
    write_utterances(test_manifest, out_dir / "manifests" / "test.tsv");
    write_manifest(abx_dev, out_dir / "manifests" / "abx_dev.tsv");
    write_manifest(abx_test, out_dir / "manifests" / "abx_test.tsv");
    write_manifest(words_dev, out_dir / "manifests" / "words_dev.tsv");
    write_manifest(words_test, out_dir / "manifests" / "words_test.tsv");
    write_manifest(accept_dev, out_dir / "manifests" / "accept_dev.tsv");
    write_manifest(accept_test, out_dir / "manifests" / "accept_test.tsv");
    write_manifest(simi_dev, out_dir / "manifests" / "simi_dev.tsv");
    write_manifest(simi_test, out_dir / "manifests" / "simi_test.tsv");

    // Resolved-config echo, one sorted key per line.
    {
        std::ofstream cfg(out_dir / "corpus.cfg", std::ios::trunc);
        if (!cfg) throw IoError("cannot write corpus.cfg");
        for (const auto& [key, value] : spec.to_config().entries()) {
            cfg << key << " = " << value << '\n';
        }
    }

    CorpusSummary summary;
    summary.root = out_dir;
    summary.utterances_written = jobs.size();
    summary.eval_items_written = abx_dev.items.size() + abx_test.items.size() +
                                 words_dev.items.size() + words_test.items.size() +
                                 accept_dev.items.size() + accept_test.items.size() +
                                 simi_dev.items.size() + simi_test.items.size();
    return summary;
}

}  // namespace slm
