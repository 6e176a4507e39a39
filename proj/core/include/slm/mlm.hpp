#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "slm/rng.hpp"
#include "slm/types.hpp"

namespace slm {

enum class InputMode { Discrete, Continuous };
enum class TargetMode { Discrete, Continuous };
enum class LossKind { NllL, NllE, L1, L2, Nce };

std::string to_string(InputMode m);
std::string to_string(TargetMode m);
std::string to_string(LossKind k);
InputMode input_mode_from_string(const std::string& s);
TargetMode target_mode_from_string(const std::string& s);
LossKind loss_kind_from_string(const std::string& s);

// Configuration of the masked-prediction encoder. Losses pair with target
// modes: NLL-l / NLL-e require discrete targets, L1 / L2 / NCE continuous
// ones; validate() rejects every other combination before any compute.
struct ModelConfig {
    InputMode input_mode = InputMode::Discrete;
    TargetMode target_mode = TargetMode::Discrete;
    LossKind loss = LossKind::NllL;
    int vocab_size = 50;    // K, used by discrete inputs and/or targets
    int feature_dim = 16;   // D, used by continuous inputs and/or targets
    int model_dim = 32;     // H
    int layers = 2;
    int heads = 2;
    int ffn_mult = 4;
    int max_seq_len = 256;
    int nce_negatives = 100;
    double temperature = 0.1;  // tau for NLL-e and NCE cosine softmax
    bool use_positions = true;
    // NLL-e reuses the input embedding table as the target-unit embeddings
    // when the input is discrete (same vocabulary); otherwise a dedicated
    // table is learned.
    bool tie_target_embeddings = true;
    // Probe extensions: a learned begin-of-sequence embedding prepended to
    // the input, plus a classification head over num_classes read from it.
    bool with_bos = false;
    int num_classes = 0;

    void validate() const;
    bool tied_unit_embeddings() const;
};

// Span masking: spans of length max(1, round(N(span_mean, span_std^2)))
// starting uniformly at random, overlapping freely, until coverage reaches
// the target. New positions stop being added at coverage + 0.1 so realized
// coverage stays inside [target, target + 0.1] whenever T permits.
struct MaskingPolicy {
    double span_mean = 10.0;
    double span_std = 10.0;
    double coverage = 0.5;
    std::uint64_t seed = 0;
};

struct MaskSet {
    std::vector<int> positions;                 // sorted, unique
    std::vector<std::pair<int, int>> spans;     // sampled [start, end) spans
};

// Deterministic in (policy, T, stream): the policy seed and the stream id
// are mixed into an independent RNG.
MaskSet sample_masks(const MaskingPolicy& policy, int length, std::uint64_t stream);

// One utterance in the representation the model consumes. Only the views
// selected by the config's input/target modes are read.
struct ModelSequence {
    std::vector<std::int32_t> input_units;
    Eigen::MatrixXd input_features;
    std::vector<std::int32_t> target_units;
    Eigen::MatrixXd target_features;

    Eigen::Index length(const ModelConfig& config) const;
};

ModelSequence make_model_sequence(const ModelConfig& config, const FeatureSequence* features,
                                  const UnitSequence* units);

// Named parameter blocks in a fixed, deterministic order. Vectors are 1xN.
struct ModelParams {
    ModelConfig config;
    std::vector<std::string> names;
    std::vector<Eigen::MatrixXd> values;

    static ModelParams init(const ModelConfig& config, std::uint64_t seed);

    std::size_t index_of(const std::string& name) const;
    bool has_block(const std::string& name) const;
    Eigen::MatrixXd& block(const std::string& name);
    const Eigen::MatrixXd& block(const std::string& name) const;
    std::size_t total_parameters() const;

private:
    std::unordered_map<std::string, std::size_t> index_;
    friend ModelParams read_model(const std::filesystem::path&);
};

// Gradient buffers aligned with ModelParams::values.
using Gradients = std::vector<Eigen::MatrixXd>;
Gradients zero_gradients(const ModelParams& params);

// Caches from a forward pass, consumed by the matching backward pass.
struct LayerTrace {
    Eigen::MatrixXd input;
    Eigen::MatrixXd ln1_norm;
    Eigen::VectorXd ln1_inv_std;
    Eigen::MatrixXd ln1_out;
    Eigen::MatrixXd q, k, v;
    std::vector<Eigen::MatrixXd> attn_probs;  // per head, T' x T'
    Eigen::MatrixXd heads_concat;
    Eigen::MatrixXd res1;
    Eigen::MatrixXd ln2_norm;
    Eigen::VectorXd ln2_inv_std;
    Eigen::MatrixXd ln2_out;
    Eigen::MatrixXd ffn_pre;
    Eigen::MatrixXd ffn_act;
};

struct EncoderTrace {
    const ModelSequence* sequence = nullptr;
    std::vector<int> masked_rows;  // row indices after the optional bos shift
    Eigen::MatrixXd embedded;
    std::vector<LayerTrace> layers;
    Eigen::MatrixXd final_norm;
    Eigen::VectorXd final_inv_std;
    Eigen::MatrixXd final_hidden;
    // NLL-e head caches
    Eigen::MatrixXd head_proj;
    Eigen::MatrixXd proj_dirs;   // row-normalized proj outputs
    Eigen::MatrixXd unit_dirs;   // row-normalized unit embeddings
    Eigen::VectorXd proj_norms;
    Eigen::VectorXd unit_norms;
    Eigen::MatrixXd cosines;     // T' x K
};

struct ForwardResult {
    // hidden[l] is the residual stream after block l, l = 0 .. layers;
    // hidden[0] is the embedding output. All are pre-final-norm.
    std::vector<Eigen::MatrixXd> hidden;
    Eigen::MatrixXd final_hidden;  // after the final layer norm
    Eigen::MatrixXd outputs;       // T' x K logits or T' x D predictions
    int row_offset = 0;            // 1 when a bos token was prepended
};

// Masked positions use sequence coordinates (before any bos shift). Empty
// mask sets are fine; outputs are defined at every position.
ForwardResult forward(const ModelParams& params, const ModelSequence& seq,
                      const std::vector<int>& masked_positions, EncoderTrace* trace = nullptr);

struct LossResult {
    double value = 0.0;
    // Pseudo log-probability per masked position (same order as the masked
    // position list); equals minus the per-position loss for every kind.
    std::vector<double> per_position_plp;
    Eigen::MatrixXd d_outputs;  // populated when want_grad
    bool negatives_truncated = false;
    int negatives_used = 0;
};

// Loss over masked positions only. negatives_seed drives NCE candidate
// sampling (ignored by the other kinds).
LossResult compute_loss(const ModelParams& params, const ModelSequence& seq,
                        const Eigen::MatrixXd& outputs, const std::vector<int>& masked_positions,
                        std::uint64_t negatives_seed, bool want_grad);

// Backpropagation. backward() starts at the output head; the final-hidden
// variant serves heads implemented outside this module (speaker probe).
void backward(const ModelParams& params, const EncoderTrace& trace,
              const Eigen::MatrixXd& d_outputs, Gradients& grads);
void backward_from_final_hidden(const ModelParams& params, const EncoderTrace& trace,
                                const Eigen::MatrixXd& d_final_hidden, Gradients& grads);

// Parameter file: magic "ZMLM", u32 version=1, config as a length-prefixed
// key=value text blob, then named blocks (name, rows, cols, f32 LE payload).
ModelParams read_model(const std::filesystem::path& path);
void write_model(const ModelParams& params, const std::filesystem::path& path);

}  // namespace slm
