#pragma once

#include <filesystem>

#include "slm/types.hpp"

namespace slm {

// Binary feature file: magic "ZFEA", u32 version=1, u32 T, u32 D,
// f32 frame_rate_hz, then T*D f32 values, row-major, all little-endian.
// write(read(p)) is byte-identical to p for every valid p.
FeatureSequence read_features(const std::filesystem::path& path);
void write_features(const FeatureSequence& seq, const std::filesystem::path& path);

// Unit file: UTF-8 text, one utterance per line of space-separated decimal
// indices. The vocabulary size is declared out of band (sidecar or manifest
// column), hence the parameter. Single-utterance form used by the pipeline.
UnitSequence read_units(const std::filesystem::path& path, std::int32_t vocab_size);
void write_units(const UnitSequence& seq, const std::filesystem::path& path);

// Sidecar carrying the vocabulary size for a directory of unit files.
std::int32_t read_vocab_sidecar(const std::filesystem::path& units_dir);
void write_vocab_sidecar(const std::filesystem::path& units_dir, std::int32_t vocab_size);

// Alignment file: one line of space-separated phoneme ids per utterance,
// same line/frame count as the sequence it annotates. The phone inventory
// lives in a `phones.txt` sidecar (one name per line) next to the files.
PhoneAlignment read_alignment(const std::filesystem::path& path,
                              const std::vector<std::string>& phone_inventory);
void write_alignment(const PhoneAlignment& alignment, const std::filesystem::path& path);

std::vector<std::string> read_phone_inventory(const std::filesystem::path& path);
void write_phone_inventory(const std::vector<std::string>& inventory,
                           const std::filesystem::path& path);

// Evaluation manifest: tab-separated text with a header row naming the
// EvalItem fields; empty human_score cells mean "absent".
EvalManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const EvalManifest& manifest, const std::filesystem::path& path);

// Utterance listing for train/dev/test splits, same TSV conventions.
UtteranceManifest read_utterances(const std::filesystem::path& path);
void write_utterances(const UtteranceManifest& manifest, const std::filesystem::path& path);

}  // namespace slm
