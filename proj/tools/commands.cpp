#include "commands.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>

#include "slm/abx.hpp"
#include "slm/error.hpp"
#include "slm/io.hpp"
#include "slm/kmeans.hpp"
#include "slm/mlm_train.hpp"
#include "slm/probes.hpp"
#include "slm/scoring.hpp"
#include "slm/synth.hpp"

namespace slm::cli {

namespace fs = std::filesystem;

namespace {

Config load_config(const fs::path& path, const std::vector<std::string>& overrides) {
    Config cfg = path.empty() ? Config() : Config::parse_file(path);
    for (const auto& assignment : overrides) cfg.set_from_override(assignment);
    return cfg;
}

CorpusSpec corpus_spec_of(const fs::path& corpus) {
    return CorpusSpec::from_config(Config::parse_file(corpus / "corpus.cfg"));
}

fs::path manifest_path(const fs::path& corpus, const std::string& name) {
    if (name.find('/') != std::string::npos || name.find('.') != std::string::npos) {
        return name;  // caller passed a path
    }
    return corpus / "manifests" / (name + ".tsv");
}

std::string ref_basename(const std::string& file_ref) {
    const auto slash = file_ref.rfind('/');
    return slash == std::string::npos ? file_ref : file_ref.substr(slash + 1);
}

FeatureSequence load_item_features(const fs::path& corpus, const std::string& file_ref) {
    return read_features(corpus / (file_ref + ".zfea"));
}

UnitSequence load_item_units(const fs::path& units_dir, const std::string& file_ref,
                             std::int32_t vocab) {
    return read_units(units_dir / (ref_basename(file_ref) + ".units"), vocab);
}

// Training/model keys shared by train and sweep.
ModelConfig model_config_from(const Config& cfg, int vocab_size, int feature_dim) {
    ModelConfig c;
    c.input_mode = input_mode_from_string(cfg.get_str("input_mode", "discrete"));
    c.target_mode = target_mode_from_string(cfg.get_str("target_mode", "discrete"));
    c.loss = loss_kind_from_string(cfg.get_str("loss", "nll-l"));
    c.vocab_size = vocab_size;
    c.feature_dim = feature_dim;
    c.model_dim = static_cast<int>(cfg.get_int("model_dim", 32));
    c.layers = static_cast<int>(cfg.get_int("layers", 2));
    c.heads = static_cast<int>(cfg.get_int("heads", 2));
    c.ffn_mult = static_cast<int>(cfg.get_int("ffn_mult", 4));
    c.max_seq_len = static_cast<int>(cfg.get_int("max_seq_len", 256));
    c.nce_negatives = static_cast<int>(cfg.get_int("nce_negatives", 100));
    c.temperature = cfg.get_double("temperature", 0.1);
    c.use_positions = cfg.get_bool("use_positions", true);
    c.tie_target_embeddings = cfg.get_bool("tie_target_embeddings", true);
    c.validate();
    return c;
}

TrainOptions train_options_from(const Config& cfg) {
    TrainOptions options;
    options.optimizer.learning_rate = cfg.get_double("learning_rate", 0.05);
    options.optimizer.momentum = cfg.get_double("momentum", 0.9);
    options.optimizer.warmup_steps = static_cast<int>(cfg.get_int("warmup_steps", 50));
    options.optimizer.steps = static_cast<int>(cfg.get_int("steps", 500));
    options.optimizer.batch_size = static_cast<int>(cfg.get_int("batch_size", 8));
    options.masking.span_mean = cfg.get_double("span_mean", 10.0);
    options.masking.span_std = cfg.get_double("span_std", 10.0);
    options.masking.coverage = cfg.get_double("coverage", 0.5);
    options.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 1));
    return options;
}

void echo_model_keys(Report& report, const ModelConfig& c, const TrainOptions& options) {
    report.add_param("input_mode", to_string(c.input_mode));
    report.add_param("target_mode", to_string(c.target_mode));
    report.add_param("loss", to_string(c.loss));
    report.add_param("vocab_size", static_cast<std::int64_t>(c.vocab_size));
    report.add_param("feature_dim", static_cast<std::int64_t>(c.feature_dim));
    report.add_param("model_dim", static_cast<std::int64_t>(c.model_dim));
    report.add_param("layers", static_cast<std::int64_t>(c.layers));
    report.add_param("heads", static_cast<std::int64_t>(c.heads));
    report.add_param("ffn_mult", static_cast<std::int64_t>(c.ffn_mult));
    report.add_param("max_seq_len", static_cast<std::int64_t>(c.max_seq_len));
    report.add_param("nce_negatives", static_cast<std::int64_t>(c.nce_negatives));
    report.add_param("temperature", c.temperature);
    report.add_param("use_positions", std::string(c.use_positions ? "true" : "false"));
    report.add_param("tie_target_embeddings",
                     std::string(c.tie_target_embeddings ? "true" : "false"));
    report.add_param("steps", static_cast<std::int64_t>(options.optimizer.steps));
    report.add_param("batch_size", static_cast<std::int64_t>(options.optimizer.batch_size));
    report.add_param("learning_rate", options.optimizer.learning_rate);
    report.add_param("momentum", options.optimizer.momentum);
    report.add_param("warmup_steps", static_cast<std::int64_t>(options.optimizer.warmup_steps));
    report.add_param("span_mean", options.masking.span_mean);
    report.add_param("span_std", options.masking.span_std);
    report.add_param("coverage", options.masking.coverage);
    report.add_param("seed", static_cast<std::int64_t>(options.seed));
}

// Builds the per-utterance model inputs for a split.
std::vector<ModelSequence> load_split_sequences(const ModelConfig& config, const fs::path& corpus,
                                                const fs::path& units_dir,
                                                const UtteranceManifest& manifest) {
    const bool needs_units =
        config.input_mode == InputMode::Discrete || config.target_mode == TargetMode::Discrete;
    const bool needs_features = config.input_mode == InputMode::Continuous ||
                                config.target_mode == TargetMode::Continuous;
    if (needs_units && units_dir.empty()) {
        throw ConfigError("model consumes discrete units: pass --units");
    }
    std::vector<ModelSequence> sequences;
    sequences.reserve(manifest.entries.size());
    for (const auto& entry : manifest.entries) {
        FeatureSequence features;
        UnitSequence units;
        if (needs_features) features = load_item_features(corpus, entry.feature_ref);
        if (needs_units) units = load_item_units(units_dir, entry.feature_ref, config.vocab_size);
        sequences.push_back(make_model_sequence(config, needs_features ? &features : nullptr,
                                                needs_units ? &units : nullptr));
    }
    return sequences;
}

SequenceLookup make_lookup(const ModelConfig& config, const fs::path& corpus,
                           const fs::path& units_dir) {
    const bool needs_units =
        config.input_mode == InputMode::Discrete || config.target_mode == TargetMode::Discrete;
    const bool needs_features = config.input_mode == InputMode::Continuous ||
                                config.target_mode == TargetMode::Continuous;
    if (needs_units && units_dir.empty()) {
        throw ConfigError("model consumes discrete units: pass --units");
    }
    return [config, corpus, units_dir, needs_units, needs_features](const EvalItem& item) {
        FeatureSequence features;
        UnitSequence units;
        if (needs_features) features = load_item_features(corpus, item.file_ref);
        if (needs_units) units = load_item_units(units_dir, item.file_ref, config.vocab_size);
        return make_model_sequence(config, needs_features ? &features : nullptr,
                                   needs_units ? &units : nullptr);
    };
}

EvalManifest load_nonempty_manifest(const fs::path& path) {
    const EvalManifest manifest = read_manifest(path);
    if (manifest.items.empty()) {
        throw ValidationError("empty manifest: " + path.string());
    }
    return manifest;
}

int speaker_index(const std::string& speaker_id, std::map<std::string, int>& table) {
    const auto [it, inserted] = table.try_emplace(speaker_id, static_cast<int>(table.size()));
    return it->second;
}

}  // namespace

// ---------------------------------------------------------------------------

Report cmd_gen(const GenArgs& args) {
    const Config cfg = load_config(args.config, args.overrides);
    const CorpusSpec spec = CorpusSpec::from_config(cfg);
    const CorpusSummary summary = generate_corpus(spec, args.out);
    Report report;
    report.metric = "corpus_utterances";
    report.value = static_cast<double>(summary.utterances_written);
    for (const auto& [key, value] : spec.to_config().entries()) report.add_param(key, value);
    report.breakdown.emplace_back("eval_items", static_cast<double>(summary.eval_items_written),
                                  0.0);
    report.write(args.out / "gen_report");
    return report;
}

Report cmd_quantize(const QuantizeArgs& args) {
    if (args.k < 1) throw ConfigError("k must be >= 1");
    const CorpusSpec spec = corpus_spec_of(args.corpus);
    const UtteranceManifest train = read_utterances(args.corpus / "manifests" / "train.tsv");

    // Pool training frames; subsample deterministically when over budget.
    std::vector<FeatureSequence> loaded;
    loaded.reserve(train.entries.size());
    Eigen::Index total = 0;
    for (const auto& entry : train.entries) {
        loaded.push_back(load_item_features(args.corpus, entry.feature_ref));
        total += loaded.back().length();
    }
    const Eigen::Index dim = loaded.front().dim();
    MatrixF data(total, dim);
    Eigen::Index at = 0;
    for (const auto& seq : loaded) {
        data.middleRows(at, seq.length()) = seq.frames;
        at += seq.length();
    }
    if (args.max_frames > 0 && total > args.max_frames) {
        MatrixF sample(args.max_frames, dim);
        Rng rng(mix_seed(args.seed, 0x5eed));
        std::vector<Eigen::Index> index(static_cast<std::size_t>(total));
        std::iota(index.begin(), index.end(), 0);
        for (int i = 0; i < args.max_frames; ++i) {
            const auto j = i + static_cast<Eigen::Index>(
                                   rng.uniform_int(static_cast<std::uint64_t>(total - i)));
            std::swap(index[static_cast<std::size_t>(i)], index[static_cast<std::size_t>(j)]);
            sample.row(i) = data.row(index[static_cast<std::size_t>(i)]);
        }
        data = std::move(sample);
    }

    KmeansTrace trace;
    KmeansOptions options;
    options.max_iters = args.max_iters;
    options.tol = args.tol;
    const Codebook codebook = kmeans_fit(data, args.k, args.seed, options, &trace);

    fs::create_directories(args.out);
    write_codebook(codebook, args.out / "codebook.zcbk");
    write_vocab_sidecar(args.out, static_cast<std::int32_t>(codebook.size()));

    // Quantize every feature file in the corpus so downstream consumers can
    // resolve any manifest ref.
    std::vector<fs::path> feature_files;
    for (const auto& entry : fs::directory_iterator(args.corpus / "features")) {
        if (entry.path().extension() == ".zfea") feature_files.push_back(entry.path());
    }
    std::sort(feature_files.begin(), feature_files.end());
    for (const auto& path : feature_files) {
        const FeatureSequence seq = read_features(path);
        const UnitSequence units = quantize(seq, codebook);
        write_units(units, args.out / (path.stem().string() + ".units"));
    }

    Report report;
    report.metric = "kmeans_inertia";
    report.value = codebook.training_inertia;
    report.add_param("k", static_cast<std::int64_t>(args.k));
    report.add_param("seed", static_cast<std::int64_t>(args.seed));
    report.add_param("frames_fit", static_cast<std::int64_t>(data.rows()));
    report.add_param("iterations", static_cast<std::int64_t>(trace.iterations));
    report.add_param("converged", std::string(trace.converged ? "true" : "false"));
    report.add_param("reseeded_clusters", static_cast<std::int64_t>(trace.reseeded_clusters));
    report.add_param("files_quantized", static_cast<std::int64_t>(feature_files.size()));
    report.add_param("frame_rate_hz", static_cast<double>(spec.frame_rate_hz));
    for (std::size_t i = 0; i < trace.inertia.size(); ++i) {
        report.breakdown.emplace_back("iter" + std::to_string(i), trace.inertia[i], 0.0);
    }
    report.write(args.out / "quantize_report");
    return report;
}

Report cmd_train(const TrainArgs& args) {
    const Config cfg = load_config(args.config, args.overrides);
    const CorpusSpec spec = corpus_spec_of(args.corpus);
    const UtteranceManifest train = read_utterances(args.corpus / "manifests" / "train.tsv");

    int vocab = 0;
    if (!args.units.empty()) vocab = read_vocab_sidecar(args.units);
    const ModelConfig config = model_config_from(cfg, vocab, spec.dim);
    const TrainOptions options = train_options_from(cfg);

    const std::vector<ModelSequence> sequences =
        load_split_sequences(config, args.corpus, args.units, train);
    const TrainResult result = train_model(config, sequences, options);

    if (!args.out.parent_path().empty()) fs::create_directories(args.out.parent_path());
    write_model(result.params, args.out);
    {
        std::ofstream trace(args.out.string() + ".loss.tsv", std::ios::trunc);
        if (!trace) throw IoError("cannot write loss trace");
        trace << "step\tloss\n";
        for (std::size_t i = 0; i < result.loss_trace.size(); ++i) {
            trace << i << '\t' << format_number(result.loss_trace[i]) << '\n';
        }
    }

    Report report;
    report.metric = "train_final_loss";
    report.value = result.loss_trace.empty() ? 0.0 : result.loss_trace.back();
    echo_model_keys(report, config, options);
    report.add_param("parameters", static_cast<std::int64_t>(result.params.total_parameters()));
    report.add_param("train_utterances", static_cast<std::int64_t>(sequences.size()));
    if (result.nce_negatives_truncated) {
        report.notes.push_back("nce drew fewer negatives than requested on short sequences");
    }
    report.write(args.out.string() + ".report");
    return report;
}

Report cmd_eval_abx(const EvalAbxArgs& args) {
    const EvalManifest manifest = load_nonempty_manifest(manifest_path(args.corpus, args.manifest));
    const auto triplets = triplets_from_manifest(manifest);
    if (triplets.empty()) throw ValidationError("manifest has no abx items");
    const AbxMode mode = args.mode == "within"
                             ? AbxMode::Within
                             : (args.mode == "across"
                                    ? AbxMode::Across
                                    : throw ConfigError("mode must be within or across"));

    const CorpusSpec spec = corpus_spec_of(args.corpus);
    Codebook codebook;
    std::int32_t vocab = 0;
    if (!args.units.empty()) {
        codebook = read_codebook(args.units / "codebook.zcbk");
        vocab = read_vocab_sidecar(args.units);
    }
    // Features are loaded once per distinct ref, then shared read-only.
    std::map<std::string, FeatureSequence> cache;
    std::set<std::string> refs;
    for (const auto& t : triplets) {
        refs.insert(t.a_ref);
        refs.insert(t.b_ref);
        refs.insert(t.x_ref);
    }
    for (const auto& ref : refs) {
        if (args.units.empty()) {
            cache.emplace(ref, load_item_features(args.corpus, ref));
        } else {
            const UnitSequence units = load_item_units(args.units, ref, vocab);
            cache.emplace(ref, dequantize(units, codebook, spec.frame_rate_hz));
        }
    }
    const auto lookup = [&cache](const std::string& ref) -> const FeatureSequence& {
        return cache.at(ref);
    };
    const AbxResult result = abx_error(triplets, lookup, mode);

    Report report;
    report.metric = args.units.empty() ? "abx_error" : "abx_error_units";
    report.value = result.error;
    report.add_param("mode", args.mode);
    report.add_param("triplets", static_cast<std::int64_t>(result.triplets_scored));
    report.add_param("representation", std::string(args.units.empty() ? "continuous" : "units"));
    if (vocab > 0) report.add_param("k", static_cast<std::int64_t>(vocab));
    for (const auto& [cell, error, count] : result.cells) {
        report.breakdown.emplace_back(cell, error, static_cast<double>(count));
    }
    if (!args.out.empty()) report.write(args.out);
    return report;
}

Report cmd_eval_pairs(const EvalPairsArgs& args) {
    const ModelParams params = read_model(args.model);
    const SequenceLookup lookup = make_lookup(params.config, args.corpus, args.units);
    WindowSpec window{args.window, args.step};
    Report report;
    if (!args.tune_on.empty()) {
        const EvalManifest dev = load_nonempty_manifest(manifest_path(args.corpus, args.tune_on));
        const auto tune = tune_window(params, dev, default_window_grid(corpus_spec_of(args.corpus).frame_rate_hz),
                                      lookup, args.seed);
        window = tune.best;
        for (const auto& [spec, accuracy] : tune.evaluated) {
            report.breakdown.emplace_back(
                "dev_M" + std::to_string(spec.window) + "_dt" + std::to_string(spec.step),
                accuracy, 0.0);
        }
        report.add_param("tuned_on", args.tune_on);
    }
    const EvalManifest manifest = load_nonempty_manifest(manifest_path(args.corpus, args.manifest));
    const auto scorer = make_mplp_scorer(params, lookup, window, args.seed);
    const PairAccuracyResult result = pair_accuracy(manifest, scorer);

    report.metric = "pair_accuracy";
    report.value = result.accuracy;
    report.add_param("manifest", args.manifest);
    report.add_param("window", static_cast<std::int64_t>(window.window));
    report.add_param("step", static_cast<std::int64_t>(window.step));
    report.add_param("pairs", static_cast<std::int64_t>(result.pairs));
    report.add_param("seed", static_cast<std::int64_t>(args.seed));
    report.add_param("loss", to_string(params.config.loss));
    for (const auto& [subset, accuracy, count] : result.per_subset) {
        report.breakdown.emplace_back(subset, accuracy, static_cast<double>(count));
    }
    if (!args.out.empty()) report.write(args.out);
    return report;
}

Report cmd_eval_simi(const EvalSimiArgs& args) {
    const ModelParams params = read_model(args.model);
    const SequenceLookup lookup = make_lookup(params.config, args.corpus, args.units);
    PoolingSpec pooling{args.layer, pooling_from_string(args.pooling)};
    Report report;
    if (!args.tune_on.empty()) {
        const EvalManifest dev = load_nonempty_manifest(manifest_path(args.corpus, args.tune_on));
        const auto tune =
            tune_pooling(params, dev, default_pooling_grid(params.config.layers), lookup);
        pooling = tune.best;
        for (const auto& [spec, value] : tune.evaluated) {
            report.breakdown.emplace_back(
                "dev_layer" + std::to_string(spec.layer) + "_" + to_string(spec.pooling), value,
                0.0);
        }
        report.add_param("tuned_on", args.tune_on);
    }
    const EvalManifest manifest = load_nonempty_manifest(manifest_path(args.corpus, args.manifest));
    const auto scores = similarity_scores(params, manifest, pooling, lookup);
    const WsimiResult result = wsimi(group_simi_subsets(scores));

    report.metric = "wsimi";
    report.value = result.value;
    report.add_param("manifest", args.manifest);
    report.add_param("layer", static_cast<std::int64_t>(pooling.layer));
    report.add_param("pooling", to_string(pooling.pooling));
    for (const auto& [domain, score] : result.domain_scores) {
        report.breakdown.emplace_back("domain:" + domain, score, 0.0);
    }
    for (const auto& [subset, pcc, size] : result.subsets) {
        report.breakdown.emplace_back(subset, pcc, static_cast<double>(size));
    }
    for (const auto& name : result.excluded) {
        report.notes.push_back("excluded zero-variance subset " + name);
    }
    if (!args.out.empty()) report.write(args.out);
    return report;
}

Report cmd_probe_speaker(const ProbeArgs& args) {
    const UtteranceManifest manifest =
        read_utterances(args.corpus / "manifests" / (args.split + ".tsv"));
    std::map<std::string, int> speaker_table;
    std::vector<int> labels;
    labels.reserve(manifest.entries.size());
    for (const auto& entry : manifest.entries) {
        labels.push_back(speaker_index(entry.speaker_id, speaker_table));
    }
    ProbeOptions options;
    options.epochs = args.epochs;
    options.optimizer.learning_rate = args.learning_rate;

    ProbeResult result;
    if (args.units.empty()) {
        std::vector<FeatureSequence> features;
        features.reserve(manifest.entries.size());
        for (const auto& entry : manifest.entries) {
            features.push_back(load_item_features(args.corpus, entry.feature_ref));
        }
        result = speaker_probe(features, labels, static_cast<int>(speaker_table.size()), options,
                               args.seed);
    } else {
        const std::int32_t vocab = read_vocab_sidecar(args.units);
        std::vector<UnitSequence> units;
        units.reserve(manifest.entries.size());
        for (const auto& entry : manifest.entries) {
            units.push_back(load_item_units(args.units, entry.feature_ref, vocab));
        }
        result = speaker_probe(units, labels, static_cast<int>(speaker_table.size()), options,
                               args.seed);
    }

    Report report;
    report.metric = "speaker_probe_accuracy";
    report.value = result.test_accuracy;
    report.add_param("split", args.split);
    report.add_param("speakers", static_cast<std::int64_t>(speaker_table.size()));
    report.add_param("representation", std::string(args.units.empty() ? "continuous" : "units"));
    report.add_param("epochs", static_cast<std::int64_t>(args.epochs));
    report.add_param("learning_rate", args.learning_rate);
    report.add_param("seed", static_cast<std::int64_t>(args.seed));
    report.add_param("best_epoch", static_cast<std::int64_t>(result.best_epoch));
    report.add_param("best_valid_accuracy", result.best_valid_accuracy);
    for (std::size_t e = 0; e < result.valid_accuracy_per_epoch.size(); ++e) {
        report.breakdown.emplace_back("valid_epoch" + std::to_string(e),
                                      result.valid_accuracy_per_epoch[e], 0.0);
    }
    if (!args.out.empty()) report.write(args.out);
    return report;
}

Report cmd_align_units(const AlignArgs& args) {
    const UtteranceManifest manifest =
        read_utterances(args.corpus / "manifests" / (args.split + ".tsv"));
    const std::int32_t vocab = read_vocab_sidecar(args.units);
    const auto inventory = read_phone_inventory(args.corpus / "alignments" / "phones.txt");

    std::vector<UnitSequence> units;
    std::vector<PhoneAlignment> alignments;
    units.reserve(manifest.entries.size());
    alignments.reserve(manifest.entries.size());
    for (const auto& entry : manifest.entries) {
        units.push_back(load_item_units(args.units, entry.feature_ref, vocab));
        alignments.push_back(
            read_alignment(args.corpus / (entry.align_ref + ".algn"), inventory));
    }
    const AlignmentMatrix matrix = unit_phone_alignment(units, alignments);
    const std::vector<int> order = order_rows(matrix);

    {
        std::ofstream out(args.out.string() + ".matrix.tsv", std::ios::trunc);
        if (!out) throw IoError("cannot write alignment matrix");
        out << "unit";
        for (const auto& phone : inventory) out << '\t' << phone;
        out << '\n';
        for (Eigen::Index u = 0; u < matrix.prob.rows(); ++u) {
            out << u;
            for (Eigen::Index p = 0; p < matrix.prob.cols(); ++p) {
                out << '\t' << format_number(matrix.prob(u, p));
            }
            out << '\n';
        }
    }
    {
        std::ofstream out(args.out.string() + ".row_order.txt", std::ios::trunc);
        if (!out) throw IoError("cannot write row order");
        for (const int u : order) out << u << '\n';
    }

    Report report;
    report.metric = "unit_phone_purity";
    report.value = matrix.purity();
    report.add_param("split", args.split);
    report.add_param("k", static_cast<std::int64_t>(vocab));
    report.add_param("phones", static_cast<std::int64_t>(inventory.size()));
    report.add_param("frames", static_cast<std::int64_t>(matrix.total_frames));
    report.add_param("zero_rows", static_cast<std::int64_t>(matrix.zero_rows.size()));
    for (const int u : matrix.zero_rows) {
        report.notes.push_back("unit " + std::to_string(u) + " never used");
    }
    report.write(args.out);
    return report;
}

Report cmd_sweep(const SweepArgs& args) {
    if (args.k_values.empty()) throw ConfigError("sweep needs at least one k");
    fs::create_directories(args.out);
    const Config model_cfg = load_config(args.config, args.overrides);
    const WindowSpec window{args.window, args.step};

    Report report;
    report.metric = "sweep_rows";
    std::ofstream table(args.out / "sweep.tsv", std::ios::trunc);
    if (!table) throw IoError("cannot write sweep table");
    table << "k\tspk_probe\tabx\twords_acc\taccept_acc\twsimi\tstatus\n";

    int rows_ok = 0;
    for (const std::int64_t k : args.k_values) {
        const std::uint64_t k_seed = mix_seed(args.seed, static_cast<std::uint64_t>(k));
        const fs::path units_dir = args.out / ("units-k" + std::to_string(k));
        try {
            QuantizeArgs quantize_args;
            quantize_args.corpus = args.corpus;
            quantize_args.out = units_dir;
            quantize_args.k = static_cast<int>(k);
            quantize_args.seed = k_seed;
            cmd_quantize(quantize_args);

            TrainArgs train_args;
            train_args.corpus = args.corpus;
            train_args.units = units_dir;
            train_args.config = args.config;
            train_args.overrides = args.overrides;
            train_args.overrides.push_back("input_mode=discrete");
            train_args.overrides.push_back("target_mode=discrete");
            train_args.overrides.push_back("seed=" + std::to_string(mix_seed(k_seed, 1)));
            train_args.out = args.out / ("model-k" + std::to_string(k) + ".zmlm");
            cmd_train(train_args);

            EvalAbxArgs abx_args;
            abx_args.corpus = args.corpus;
            abx_args.units = units_dir;
            abx_args.manifest = "abx_dev";
            const double abx = cmd_eval_abx(abx_args).value;

            ProbeArgs probe_args;
            probe_args.corpus = args.corpus;
            probe_args.units = units_dir;
            probe_args.seed = mix_seed(k_seed, 2);
            const double spk = cmd_probe_speaker(probe_args).value;

            EvalPairsArgs words_args;
            words_args.corpus = args.corpus;
            words_args.units = units_dir;
            words_args.model = train_args.out;
            words_args.manifest = "words_dev";
            words_args.window = window.window;
            words_args.step = window.step;
            words_args.seed = mix_seed(k_seed, 3);
            const double words = cmd_eval_pairs(words_args).value;

            EvalPairsArgs accept_args = words_args;
            accept_args.manifest = "accept_dev";
            accept_args.seed = mix_seed(k_seed, 4);
            const double accept = cmd_eval_pairs(accept_args).value;

            EvalSimiArgs simi_args;
            simi_args.corpus = args.corpus;
            simi_args.units = units_dir;
            simi_args.model = train_args.out;
            simi_args.manifest = "simi_dev";
            const double simi = cmd_eval_simi(simi_args).value;

            table << k << '\t' << format_number(spk) << '\t' << format_number(abx) << '\t'
                  << format_number(words) << '\t' << format_number(accept) << '\t'
                  << format_number(simi) << "\tok\n";
            table.flush();
            report.breakdown.emplace_back("k" + std::to_string(k) + ":words", words,
                                          static_cast<double>(k));
            ++rows_ok;
        } catch (const Error& e) {
            table << k << "\t-\t-\t-\t-\t-\tfailed: " << e.what() << '\n';
            table.flush();
            report.notes.push_back("k=" + std::to_string(k) + " failed: " + e.what());
        }
    }
    report.value = rows_ok;
    report.add_param("seed", static_cast<std::int64_t>(args.seed));
    report.add_param("window", static_cast<std::int64_t>(args.window));
    report.add_param("step", static_cast<std::int64_t>(args.step));
    report.write(args.out / "sweep_report");
    return report;
}

Report cmd_grad_check(const GradCheckArgs& args) {
    Report report;
    report.metric = "grad_check_worst";
    double worst_overall = 0.0;
    for (const auto& loss_name : args.losses) {
        const LossKind loss = loss_kind_from_string(loss_name);
        ModelConfig config;
        config.loss = loss;
        config.target_mode = (loss == LossKind::NllL || loss == LossKind::NllE)
                                 ? TargetMode::Discrete
                                 : TargetMode::Continuous;
        config.input_mode = loss == LossKind::NllE ? InputMode::Discrete : InputMode::Continuous;
        config.vocab_size = 3;
        config.feature_dim = 4;
        config.model_dim = 8;
        config.layers = 2;
        config.heads = 2;
        config.ffn_mult = 1;
        config.max_seq_len = 8;
        config.nce_negatives = 3;
        config.validate();

        Rng rng(mix_seed(args.seed, static_cast<std::uint64_t>(loss)));
        const int len = 6;
        FeatureSequence features;
        features.frames.resize(len, config.feature_dim);
        for (int t = 0; t < len; ++t) {
            for (int d = 0; d < config.feature_dim; ++d) {
                features.frames(t, d) = static_cast<float>(rng.normal());
            }
        }
        UnitSequence units;
        units.vocab_size = config.vocab_size;
        for (int t = 0; t < len; ++t) {
            units.units.push_back(static_cast<std::int32_t>(rng.uniform_int(config.vocab_size)));
        }
        const ModelSequence seq = make_model_sequence(
            config,
            (config.input_mode == InputMode::Continuous ||
             config.target_mode == TargetMode::Continuous)
                ? &features
                : nullptr,
            (config.input_mode == InputMode::Discrete || config.target_mode == TargetMode::Discrete)
                ? &units
                : nullptr);

        const ModelParams params = ModelParams::init(config, mix_seed(args.seed, 99));
        const std::vector<int> masked = {1, 2, 4};
        const double worst = gradient_check(params, seq, masked, mix_seed(args.seed, 111));
        report.breakdown.emplace_back(loss_name, worst,
                                      static_cast<double>(params.total_parameters()));
        worst_overall = std::max(worst_overall, worst);
    }
    report.value = worst_overall;
    report.add_param("tolerance", args.tolerance);
    report.add_param("seed", static_cast<std::int64_t>(args.seed));
    if (worst_overall >= args.tolerance) {
        report.notes.push_back("FAILED: worst deviation above tolerance");
    }
    return report;
}

}  // namespace slm::cli
