#include "slm/mlm.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include "slm/config.hpp"
#include "slm/error.hpp"

namespace slm {

namespace {
constexpr double kLayerNormEps = 1e-5;
constexpr double kNormGuard = 1e-12;
}  // namespace

// ---------------------------------------------------------------------------
// Enums and config

std::string to_string(InputMode m) {
    return m == InputMode::Discrete ? "discrete" : "continuous";
}
std::string to_string(TargetMode m) {
    return m == TargetMode::Discrete ? "discrete" : "continuous";
}
std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::NllL: return "nll-l";
        case LossKind::NllE: return "nll-e";
        case LossKind::L1: return "l1";
        case LossKind::L2: return "l2";
        case LossKind::Nce: return "nce";
    }
    throw ValidationError("unknown loss kind");
}

InputMode input_mode_from_string(const std::string& s) {
    if (s == "discrete") return InputMode::Discrete;
    if (s == "continuous") return InputMode::Continuous;
    throw ConfigError("unknown input mode: " + s);
}
TargetMode target_mode_from_string(const std::string& s) {
    if (s == "discrete") return TargetMode::Discrete;
    if (s == "continuous") return TargetMode::Continuous;
    throw ConfigError("unknown target mode: " + s);
}
LossKind loss_kind_from_string(const std::string& s) {
    if (s == "nll-l") return LossKind::NllL;
    if (s == "nll-e") return LossKind::NllE;
    if (s == "l1") return LossKind::L1;
    if (s == "l2") return LossKind::L2;
    if (s == "nce") return LossKind::Nce;
    throw ConfigError("unknown loss kind: " + s);
}

void ModelConfig::validate() const {
    const bool discrete_loss = loss == LossKind::NllL || loss == LossKind::NllE;
    if (discrete_loss != (target_mode == TargetMode::Discrete)) {
        throw ConfigError("loss " + to_string(loss) + " is incompatible with " +
                          to_string(target_mode) + " targets");
    }
    if (model_dim < 1 || layers < 0 || heads < 1 || ffn_mult < 1) {
        throw ConfigError("model_dim/layers/heads/ffn_mult out of range");
    }
    if (model_dim % heads != 0) {
        throw ConfigError("model_dim " + std::to_string(model_dim) +
                          " is not divisible by heads " + std::to_string(heads));
    }
    if (max_seq_len < 1) throw ConfigError("max_seq_len must be >= 1");
    if (input_mode == InputMode::Discrete || target_mode == TargetMode::Discrete) {
        if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
    }
    if (input_mode == InputMode::Continuous || target_mode == TargetMode::Continuous) {
        if (feature_dim < 1) throw ConfigError("feature_dim must be >= 1");
    }
    if (loss == LossKind::Nce && nce_negatives < 1) {
        throw ConfigError("nce_negatives must be >= 1");
    }
    if ((loss == LossKind::NllE || loss == LossKind::Nce) && !(temperature > 0.0)) {
        throw ConfigError("temperature must be positive");
    }
    if (num_classes < 0) throw ConfigError("num_classes must be >= 0");
}

bool ModelConfig::tied_unit_embeddings() const {
    return loss == LossKind::NllE && tie_target_embeddings && input_mode == InputMode::Discrete;
}

// ---------------------------------------------------------------------------
// Mask sampling

MaskSet sample_masks(const MaskingPolicy& policy, int length, std::uint64_t stream) {
    if (length < 1) throw ValidationError("sample_masks: length must be >= 1");
    Rng rng(mix_seed(policy.seed, stream));
    MaskSet result;
    std::vector<char> masked(length, 0);
    const int target = std::max<int>(1, static_cast<int>(std::llround(policy.coverage * length)));
    const int cap =
        std::max(target, static_cast<int>(std::floor((policy.coverage + 0.1) * length)));
    int count = 0;
    while (count < target) {
        const int start = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(length)));
        const int span_len = std::max<int>(
            1, static_cast<int>(std::llround(rng.normal(policy.span_mean, policy.span_std))));
        const int end = std::min(length, start + span_len);
        result.spans.emplace_back(start, end);
        for (int pos = start; pos < end && count < cap; ++pos) {
            if (!masked[pos]) {
                masked[pos] = 1;
                ++count;
            }
        }
    }
    result.positions.reserve(count);
    for (int pos = 0; pos < length; ++pos) {
        if (masked[pos]) result.positions.push_back(pos);
    }
    return result;
}

// ---------------------------------------------------------------------------
// Sequences

Eigen::Index ModelSequence::length(const ModelConfig& config) const {
    return config.input_mode == InputMode::Discrete
               ? static_cast<Eigen::Index>(input_units.size())
               : input_features.rows();
}

ModelSequence make_model_sequence(const ModelConfig& config, const FeatureSequence* features,
                                  const UnitSequence* units) {
    ModelSequence seq;
    const Eigen::Index budget = config.max_seq_len - (config.with_bos ? 1 : 0);
    Eigen::Index len = -1;
    const auto check_len = [&](Eigen::Index l, const char* what) {
        if (len >= 0 && l != len) {
            throw ValidationError(std::string("sequence length mismatch between input and ") +
                                  what);
        }
        len = l;
    };
    if (config.input_mode == InputMode::Discrete || config.target_mode == TargetMode::Discrete) {
        if (!units) throw ValidationError("model requires discrete units but none were given");
        if (units->vocab_size != config.vocab_size) {
            throw ValidationError("unit vocab " + std::to_string(units->vocab_size) +
                                  " does not match model vocab " +
                                  std::to_string(config.vocab_size));
        }
    }
    if (config.input_mode == InputMode::Continuous ||
        config.target_mode == TargetMode::Continuous) {
        if (!features) throw ValidationError("model requires features but none were given");
        if (features->dim() != config.feature_dim) {
            throw ValidationError("feature dim " + std::to_string(features->dim()) +
                                  " does not match model feature_dim " +
                                  std::to_string(config.feature_dim));
        }
    }
    if (config.input_mode == InputMode::Discrete) {
        const auto l = std::min<Eigen::Index>(static_cast<Eigen::Index>(units->units.size()), budget);
        seq.input_units.assign(units->units.begin(), units->units.begin() + l);
        check_len(l, "input units");
    } else {
        const auto l = std::min<Eigen::Index>(features->length(), budget);
        seq.input_features = features->frames.topRows(l).cast<double>();
        check_len(l, "input features");
    }
    if (config.target_mode == TargetMode::Discrete) {
        const auto l = std::min<Eigen::Index>(static_cast<Eigen::Index>(units->units.size()), budget);
        seq.target_units.assign(units->units.begin(), units->units.begin() + l);
        check_len(l, "target units");
    } else {
        const auto l = std::min<Eigen::Index>(features->length(), budget);
        seq.target_features = features->frames.topRows(l).cast<double>();
        check_len(l, "target features");
    }
    if (len < 1) throw ValidationError("empty model sequence");
    return seq;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

void init_block(Eigen::MatrixXd& m, const std::string& name, Rng& rng) {
    const auto dot = name.rfind('.');
    const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    if (name.rfind("embed.", 0) == 0) {
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal(0.0, 0.1);
        }
    } else if (!leaf.empty() && leaf[0] == 'g') {
        m.setOnes();  // layer norm gains
    } else if (!leaf.empty() && leaf[0] == 'b') {
        m.setZero();  // biases
    } else {
        // Xavier for linear maps: rows = fan_out, cols = fan_in.
        const double std = std::sqrt(2.0 / static_cast<double>(m.rows() + m.cols()));
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = rng.normal(0.0, std);
        }
    }
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    ModelParams params;
    params.config = config;
    const int h = config.model_dim;
    const int f = config.ffn_mult * h;
    const auto add = [&](const std::string& name, int rows, int cols) {
        params.names.push_back(name);
        params.values.emplace_back(rows, cols);
    };
    if (config.input_mode == InputMode::Discrete) {
        add("embed.in", config.vocab_size, h);
    } else {
        add("in.w", h, config.feature_dim);
        add("in.b", 1, h);
    }
    add("embed.mask", 1, h);
    if (config.use_positions) add("embed.pos", config.max_seq_len, h);
    if (config.with_bos) add("embed.bos", 1, h);
    for (int l = 0; l < config.layers; ++l) {
        const std::string p = "enc" + std::to_string(l) + ".";
        add(p + "ln1.g", 1, h);
        add(p + "ln1.b", 1, h);
        add(p + "attn.wq", h, h);
        add(p + "attn.bq", 1, h);
        add(p + "attn.wk", h, h);
        add(p + "attn.bk", 1, h);
        add(p + "attn.wv", h, h);
        add(p + "attn.bv", 1, h);
        add(p + "attn.wo", h, h);
        add(p + "attn.bo", 1, h);
        add(p + "ln2.g", 1, h);
        add(p + "ln2.b", 1, h);
        add(p + "ffn.w1", f, h);
        add(p + "ffn.b1", 1, f);
        add(p + "ffn.w2", h, f);
        add(p + "ffn.b2", 1, h);
    }
    add("lnf.g", 1, h);
    add("lnf.b", 1, h);
    switch (config.loss) {
        case LossKind::NllL:
            add("cls.w", config.vocab_size, h);
            add("cls.b", 1, config.vocab_size);
            break;
        case LossKind::NllE:
            add("proj.w", h, h);
            add("proj.b", 1, h);
            if (!config.tied_unit_embeddings()) add("embed.unit", config.vocab_size, h);
            break;
        default:
            add("reg.w", config.feature_dim, h);
            add("reg.b", 1, config.feature_dim);
            break;
    }
    if (config.num_classes > 0) {
        add("spk.w", config.num_classes, h);
        add("spk.b", 1, config.num_classes);
    }
    Rng rng(seed);
    for (std::size_t i = 0; i < params.values.size(); ++i) {
        init_block(params.values[i], params.names[i], rng);
        params.index_[params.names[i]] = i;
    }
    return params;
}

std::size_t ModelParams::index_of(const std::string& name) const {
    const auto it = index_.find(name);
    if (it == index_.end()) throw ValidationError("no parameter block named " + name);
    return it->second;
}

bool ModelParams::has_block(const std::string& name) const { return index_.count(name) != 0; }

Eigen::MatrixXd& ModelParams::block(const std::string& name) { return values[index_of(name)]; }

const Eigen::MatrixXd& ModelParams::block(const std::string& name) const {
    return values[index_of(name)];
}

std::size_t ModelParams::total_parameters() const {
    std::size_t n = 0;
    for (const auto& v : values) n += static_cast<std::size_t>(v.size());
    return n;
}

Gradients zero_gradients(const ModelParams& params) {
    Gradients grads;
    grads.reserve(params.values.size());
    for (const auto& v : params.values) grads.emplace_back(Eigen::MatrixXd::Zero(v.rows(), v.cols()));
    return grads;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

// Row-wise layer norm; writes the normalized rows and 1/sigma into the caches.
Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::MatrixXd& gain,
                           const Eigen::MatrixXd& bias, Eigen::MatrixXd& norm_cache,
                           Eigen::VectorXd& inv_std_cache) {
    const auto rows = x.rows();
    const auto cols = x.cols();
    norm_cache.resize(rows, cols);
    inv_std_cache.resize(rows);
    Eigen::MatrixXd out(rows, cols);
    for (Eigen::Index t = 0; t < rows; ++t) {
        const double mean = x.row(t).mean();
        const Eigen::RowVectorXd centered = x.row(t).array() - mean;
        const double var = centered.squaredNorm() / static_cast<double>(cols);
        const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
        inv_std_cache(t) = inv_std;
        norm_cache.row(t) = centered * inv_std;
        out.row(t) =
            norm_cache.row(t).cwiseProduct(gain.row(0)) + bias.row(0);
    }
    return out;
}

void layer_norm_backward(const Eigen::MatrixXd& d_out, const Eigen::MatrixXd& norm_cache,
                         const Eigen::VectorXd& inv_std_cache, const Eigen::MatrixXd& gain,
                         Eigen::MatrixXd& d_gain, Eigen::MatrixXd& d_bias,
                         Eigen::MatrixXd& d_in) {
    const auto rows = d_out.rows();
    const auto cols = d_out.cols();
    d_in.resize(rows, cols);
    for (Eigen::Index t = 0; t < rows; ++t) {
        const Eigen::RowVectorXd d_norm = d_out.row(t).cwiseProduct(gain.row(0));
        const double mean_d = d_norm.mean();
        const double mean_dx = d_norm.cwiseProduct(norm_cache.row(t)).mean();
        d_in.row(t) = ((d_norm.array() - mean_d) - norm_cache.row(t).array() * mean_dx).matrix() *
                      inv_std_cache(t);
        d_gain.row(0) += d_out.row(t).cwiseProduct(norm_cache.row(t));
        d_bias.row(0) += d_out.row(t);
    }
}

Eigen::RowVectorXd softmax_row(const Eigen::RowVectorXd& logits) {
    const double m = logits.maxCoeff();
    Eigen::RowVectorXd e = (logits.array() - m).exp();
    return e / e.sum();
}

// rows normalized with a zero-norm guard
void normalize_rows(const Eigen::MatrixXd& m, Eigen::MatrixXd& dirs, Eigen::VectorXd& norms) {
    dirs.resize(m.rows(), m.cols());
    norms.resize(m.rows());
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        norms(i) = std::max(m.row(i).norm(), kNormGuard);
        dirs.row(i) = m.row(i) / norms(i);
    }
}

}  // namespace

ForwardResult forward(const ModelParams& params, const ModelSequence& seq,
                      const std::vector<int>& masked_positions, EncoderTrace* trace) {
    const ModelConfig& config = params.config;
    const Eigen::Index seq_len = seq.length(config);
    const int offset = config.with_bos ? 1 : 0;
    const Eigen::Index rows = seq_len + offset;
    if (seq_len < 1) throw ValidationError("forward: empty sequence");
    if (rows > config.max_seq_len) {
        throw ValidationError("sequence length " + std::to_string(rows) +
                              " exceeds max_seq_len " + std::to_string(config.max_seq_len));
    }
    for (const int pos : masked_positions) {
        if (pos < 0 || pos >= seq_len) {
            throw ValidationError("masked position " + std::to_string(pos) + " out of range");
        }
    }
    const int h = config.model_dim;
    const int n_heads = config.heads;
    const int dh = h / n_heads;

    EncoderTrace local_trace;
    EncoderTrace& tr = trace ? *trace : local_trace;
    tr = EncoderTrace{};
    tr.sequence = &seq;

    // Embedding stage: token/feature embedding, mask replacement, bos,
    // learned absolute positions.
    Eigen::MatrixXd x(rows, h);
    if (config.input_mode == InputMode::Discrete) {
        const auto& table = params.block("embed.in");
        for (Eigen::Index t = 0; t < seq_len; ++t) {
            const auto unit = seq.input_units[static_cast<std::size_t>(t)];
            if (unit < 0 || unit >= config.vocab_size) {
                throw ValidationError("input unit out of range at position " + std::to_string(t));
            }
            x.row(t + offset) = table.row(unit);
        }
    } else {
        if (seq.input_features.cols() != config.feature_dim) {
            throw ValidationError("input feature dim mismatch");
        }
        const auto& w = params.block("in.w");
        const auto& b = params.block("in.b");
        x.bottomRows(seq_len) = seq.input_features * w.transpose();
        x.bottomRows(seq_len).rowwise() += b.row(0);
    }
    const auto& mask_embed = params.block("embed.mask");
    for (const int pos : masked_positions) {
        x.row(pos + offset) = mask_embed.row(0);
        tr.masked_rows.push_back(pos + offset);
    }
    if (config.with_bos) x.row(0) = params.block("embed.bos").row(0);
    if (config.use_positions) {
        x += params.block("embed.pos").topRows(rows);
    }
    tr.embedded = x;

    ForwardResult result;
    result.row_offset = offset;
    result.hidden.reserve(static_cast<std::size_t>(config.layers) + 1);
    result.hidden.push_back(x);

    Eigen::MatrixXd hidden = std::move(x);
    tr.layers.resize(config.layers);
    for (int l = 0; l < config.layers; ++l) {
        LayerTrace& lt = tr.layers[static_cast<std::size_t>(l)];
        const std::string p = "enc" + std::to_string(l) + ".";
        lt.input = hidden;

        lt.ln1_out = layer_norm(hidden, params.block(p + "ln1.g"), params.block(p + "ln1.b"),
                                lt.ln1_norm, lt.ln1_inv_std);

        lt.q = lt.ln1_out * params.block(p + "attn.wq").transpose();
        lt.q.rowwise() += params.block(p + "attn.bq").row(0);
        lt.k = lt.ln1_out * params.block(p + "attn.wk").transpose();
        lt.k.rowwise() += params.block(p + "attn.bk").row(0);
        lt.v = lt.ln1_out * params.block(p + "attn.wv").transpose();
        lt.v.rowwise() += params.block(p + "attn.bv").row(0);

        lt.heads_concat.resize(rows, h);
        lt.attn_probs.resize(static_cast<std::size_t>(n_heads));
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (int head = 0; head < n_heads; ++head) {
            const auto qh = lt.q.middleCols(head * dh, dh);
            const auto kh = lt.k.middleCols(head * dh, dh);
            const auto vh = lt.v.middleCols(head * dh, dh);
            Eigen::MatrixXd scores = qh * kh.transpose() * scale;
            Eigen::MatrixXd& probs = lt.attn_probs[static_cast<std::size_t>(head)];
            probs.resize(rows, rows);
            for (Eigen::Index t = 0; t < rows; ++t) {
                probs.row(t) = softmax_row(scores.row(t));
            }
            lt.heads_concat.middleCols(head * dh, dh) = probs * vh;
        }
        Eigen::MatrixXd attn_out = lt.heads_concat * params.block(p + "attn.wo").transpose();
        attn_out.rowwise() += params.block(p + "attn.bo").row(0);

        lt.res1 = lt.input + attn_out;

        lt.ln2_out = layer_norm(lt.res1, params.block(p + "ln2.g"), params.block(p + "ln2.b"),
                                lt.ln2_norm, lt.ln2_inv_std);
        lt.ffn_pre = lt.ln2_out * params.block(p + "ffn.w1").transpose();
        lt.ffn_pre.rowwise() += params.block(p + "ffn.b1").row(0);
        lt.ffn_act = lt.ffn_pre.cwiseMax(0.0);
        Eigen::MatrixXd ffn_out = lt.ffn_act * params.block(p + "ffn.w2").transpose();
        ffn_out.rowwise() += params.block(p + "ffn.b2").row(0);

        hidden = lt.res1 + ffn_out;
        if (!hidden.allFinite()) {
            throw NumericError("non-finite hidden state after layer " + std::to_string(l));
        }
        result.hidden.push_back(hidden);
    }

    result.final_hidden = layer_norm(hidden, params.block("lnf.g"), params.block("lnf.b"),
                                     tr.final_norm, tr.final_inv_std);
    tr.final_hidden = result.final_hidden;

    // Output head.
    switch (config.loss) {
        case LossKind::NllL: {
            result.outputs = result.final_hidden * params.block("cls.w").transpose();
            result.outputs.rowwise() += params.block("cls.b").row(0);
            break;
        }
        case LossKind::NllE: {
            tr.head_proj = result.final_hidden * params.block("proj.w").transpose();
            tr.head_proj.rowwise() += params.block("proj.b").row(0);
            const Eigen::MatrixXd& units = config.tied_unit_embeddings()
                                               ? params.block("embed.in")
                                               : params.block("embed.unit");
            normalize_rows(tr.head_proj, tr.proj_dirs, tr.proj_norms);
            normalize_rows(units, tr.unit_dirs, tr.unit_norms);
            tr.cosines = tr.proj_dirs * tr.unit_dirs.transpose();
            result.outputs = tr.cosines / config.temperature;
            break;
        }
        default: {
            result.outputs = result.final_hidden * params.block("reg.w").transpose();
            result.outputs.rowwise() += params.block("reg.b").row(0);
            break;
        }
    }
    if (!result.outputs.allFinite()) {
        throw NumericError("non-finite model outputs");
    }
    return result;
}

// ---------------------------------------------------------------------------
// Losses

namespace {

std::vector<int> sample_negatives(Eigen::Index seq_len, int position, int count, Rng& rng) {
    std::vector<int> pool;
    pool.reserve(static_cast<std::size_t>(seq_len) - 1);
    for (Eigen::Index t = 0; t < seq_len; ++t) {
        if (static_cast<int>(t) != position) pool.push_back(static_cast<int>(t));
    }
    const int n = std::min<int>(count, static_cast<int>(pool.size()));
    // Partial Fisher-Yates: the first n entries become the sample.
    for (int i = 0; i < n; ++i) {
        const auto j = i + static_cast<int>(rng.uniform_int(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(n);
    return pool;
}

}  // namespace

LossResult compute_loss(const ModelParams& params, const ModelSequence& seq,
                        const Eigen::MatrixXd& outputs, const std::vector<int>& masked_positions,
                        std::uint64_t negatives_seed, bool want_grad) {
    const ModelConfig& config = params.config;
    if (config.with_bos) {
        throw ValidationError("compute_loss does not support bos-shifted models");
    }
    if (masked_positions.empty()) {
        throw ValidationError("compute_loss: no masked positions");
    }
    const Eigen::Index seq_len = seq.length(config);
    const double inv_n = 1.0 / static_cast<double>(masked_positions.size());

    LossResult result;
    result.per_position_plp.reserve(masked_positions.size());
    if (want_grad) result.d_outputs = Eigen::MatrixXd::Zero(outputs.rows(), outputs.cols());

    switch (config.loss) {
        case LossKind::NllL:
        case LossKind::NllE: {
            if (outputs.cols() != config.vocab_size) {
                throw ValidationError("logit width does not match vocab");
            }
            if (static_cast<Eigen::Index>(seq.target_units.size()) != seq_len) {
                throw ValidationError("target units length mismatch");
            }
            for (const int pos : masked_positions) {
                const int target = seq.target_units[static_cast<std::size_t>(pos)];
                if (target < 0 || target >= config.vocab_size) {
                    throw ValidationError("target unit out of range at position " +
                                          std::to_string(pos));
                }
                const Eigen::RowVectorXd logits = outputs.row(pos);
                const double m = logits.maxCoeff();
                const double lse = m + std::log((logits.array() - m).exp().sum());
                const double logp = logits(target) - lse;
                result.per_position_plp.push_back(logp);
                result.value -= logp * inv_n;
                if (want_grad) {
                    Eigen::RowVectorXd grad = softmax_row(logits) * inv_n;
                    grad(target) -= inv_n;
                    result.d_outputs.row(pos) += grad;
                }
            }
            break;
        }
        case LossKind::L1:
        case LossKind::L2: {
            if (seq.target_features.rows() != seq_len) {
                throw ValidationError("target features length mismatch");
            }
            const double inv_d = 1.0 / static_cast<double>(config.feature_dim);
            for (const int pos : masked_positions) {
                const Eigen::RowVectorXd diff =
                    outputs.row(pos) - seq.target_features.row(pos);
                double loss_t;
                if (config.loss == LossKind::L1) {
                    loss_t = diff.cwiseAbs().sum() * inv_d;
                    if (want_grad) {
                        result.d_outputs.row(pos) +=
                            diff.unaryExpr([](double v) {
                                return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                            }) *
                            (inv_d * inv_n);
                    }
                } else {
                    loss_t = diff.squaredNorm() * inv_d;
                    if (want_grad) {
                        result.d_outputs.row(pos) += diff * (2.0 * inv_d * inv_n);
                    }
                }
                result.per_position_plp.push_back(-loss_t);
                result.value += loss_t * inv_n;
            }
            break;
        }
        case LossKind::Nce: {
            if (seq.target_features.rows() != seq_len) {
                throw ValidationError("target features length mismatch");
            }
            if (seq_len < 2) {
                throw ValidationError("NCE needs at least 2 positions to draw negatives");
            }
            for (const int pos : masked_positions) {
                Rng rng(mix_seed(negatives_seed, static_cast<std::uint64_t>(pos)));
                const auto negatives =
                    sample_negatives(seq_len, pos, config.nce_negatives, rng);
                if (static_cast<int>(negatives.size()) < config.nce_negatives) {
                    result.negatives_truncated = true;
                }
                result.negatives_used = static_cast<int>(negatives.size());
                const int n_cand = static_cast<int>(negatives.size()) + 1;

                const Eigen::RowVectorXd pred = outputs.row(pos);
                const double pred_norm = std::max(pred.norm(), kNormGuard);
                const Eigen::RowVectorXd pred_dir = pred / pred_norm;

                Eigen::MatrixXd cand_dirs(n_cand, config.feature_dim);
                Eigen::RowVectorXd logits(n_cand);
                for (int i = 0; i < n_cand; ++i) {
                    const int src = i == 0 ? pos : negatives[static_cast<std::size_t>(i - 1)];
                    const Eigen::RowVectorXd cand = seq.target_features.row(src);
                    const double cand_norm = std::max(cand.norm(), kNormGuard);
                    cand_dirs.row(i) = cand / cand_norm;
                    logits(i) = pred_dir.dot(cand_dirs.row(i)) / config.temperature;
                }
                const double m = logits.maxCoeff();
                const double lse = m + std::log((logits.array() - m).exp().sum());
                const double logp = logits(0) - lse;
                result.per_position_plp.push_back(logp);
                result.value -= logp * inv_n;
                if (want_grad) {
                    Eigen::RowVectorXd d_logits = softmax_row(logits) * inv_n;
                    d_logits(0) -= inv_n;
                    const Eigen::RowVectorXd d_cos = d_logits / config.temperature;
                    // d cos(p, c) / dp = (c_dir - cos * p_dir) / |p|
                    const Eigen::RowVectorXd cosines = logits * config.temperature;
                    const double along = d_cos.dot(cosines);
                    result.d_outputs.row(pos) +=
                        (d_cos * cand_dirs - along * pred_dir) / pred_norm;
                }
            }
            break;
        }
    }
    if (!std::isfinite(result.value)) {
        throw NumericError("non-finite loss value");
    }
    return result;
}

// ---------------------------------------------------------------------------
// Backward

void backward_from_final_hidden(const ModelParams& params, const EncoderTrace& trace,
                                const Eigen::MatrixXd& d_final_hidden, Gradients& grads) {
    const ModelConfig& config = params.config;
    const int h = config.model_dim;
    const int n_heads = config.heads;
    const int dh = h / n_heads;
    const auto gi = [&](const std::string& name) -> Eigen::MatrixXd& {
        return grads[params.index_of(name)];
    };

    Eigen::MatrixXd d_hidden;
    layer_norm_backward(d_final_hidden, trace.final_norm, trace.final_inv_std,
                        params.block("lnf.g"), gi("lnf.g"), gi("lnf.b"), d_hidden);

    for (int l = config.layers - 1; l >= 0; --l) {
        const LayerTrace& lt = trace.layers[static_cast<std::size_t>(l)];
        const std::string p = "enc" + std::to_string(l) + ".";

        // FFN branch: h_l = res1 + W2 relu(W1 f + b1) + b2
        const Eigen::MatrixXd d_ffn_out = d_hidden;
        gi(p + "ffn.w2") += d_ffn_out.transpose() * lt.ffn_act;
        gi(p + "ffn.b2") += d_ffn_out.colwise().sum();
        Eigen::MatrixXd d_act = d_ffn_out * params.block(p + "ffn.w2");
        Eigen::MatrixXd d_pre =
            d_act.cwiseProduct((lt.ffn_pre.array() > 0.0).cast<double>().matrix());
        gi(p + "ffn.w1") += d_pre.transpose() * lt.ln2_out;
        gi(p + "ffn.b1") += d_pre.colwise().sum();
        Eigen::MatrixXd d_ln2_out = d_pre * params.block(p + "ffn.w1");

        Eigen::MatrixXd d_res1;
        layer_norm_backward(d_ln2_out, lt.ln2_norm, lt.ln2_inv_std, params.block(p + "ln2.g"),
                            gi(p + "ln2.g"), gi(p + "ln2.b"), d_res1);
        d_res1 += d_hidden;  // residual

        // Attention branch: res1 = input + Wo concat + bo
        const Eigen::MatrixXd d_attn_out = d_res1;
        gi(p + "attn.wo") += d_attn_out.transpose() * lt.heads_concat;
        gi(p + "attn.bo") += d_attn_out.colwise().sum();
        Eigen::MatrixXd d_concat = d_attn_out * params.block(p + "attn.wo");

        Eigen::MatrixXd d_q = Eigen::MatrixXd::Zero(lt.q.rows(), lt.q.cols());
        Eigen::MatrixXd d_k = Eigen::MatrixXd::Zero(lt.k.rows(), lt.k.cols());
        Eigen::MatrixXd d_v = Eigen::MatrixXd::Zero(lt.v.rows(), lt.v.cols());
        const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
        for (int head = 0; head < n_heads; ++head) {
            const auto qh = lt.q.middleCols(head * dh, dh);
            const auto kh = lt.k.middleCols(head * dh, dh);
            const auto vh = lt.v.middleCols(head * dh, dh);
            const Eigen::MatrixXd& probs = lt.attn_probs[static_cast<std::size_t>(head)];
            const auto d_oh = d_concat.middleCols(head * dh, dh);

            Eigen::MatrixXd d_probs = d_oh * vh.transpose();
            d_v.middleCols(head * dh, dh) = probs.transpose() * d_oh;
            // softmax rows backward
            Eigen::MatrixXd d_scores(probs.rows(), probs.cols());
            for (Eigen::Index t = 0; t < probs.rows(); ++t) {
                const double dot = d_probs.row(t).dot(probs.row(t));
                d_scores.row(t) =
                    probs.row(t).cwiseProduct((d_probs.row(t).array() - dot).matrix());
            }
            d_q.middleCols(head * dh, dh) = d_scores * kh * scale;
            d_k.middleCols(head * dh, dh) = d_scores.transpose() * qh * scale;
        }

        gi(p + "attn.wq") += d_q.transpose() * lt.ln1_out;
        gi(p + "attn.bq") += d_q.colwise().sum();
        gi(p + "attn.wk") += d_k.transpose() * lt.ln1_out;
        gi(p + "attn.bk") += d_k.colwise().sum();
        gi(p + "attn.wv") += d_v.transpose() * lt.ln1_out;
        gi(p + "attn.bv") += d_v.colwise().sum();
        Eigen::MatrixXd d_ln1_out = d_q * params.block(p + "attn.wq") +
                                    d_k * params.block(p + "attn.wk") +
                                    d_v * params.block(p + "attn.wv");

        Eigen::MatrixXd d_input;
        layer_norm_backward(d_ln1_out, lt.ln1_norm, lt.ln1_inv_std, params.block(p + "ln1.g"),
                            gi(p + "ln1.g"), gi(p + "ln1.b"), d_input);
        d_hidden = d_res1 + d_input;  // residual into the block input
    }

    // Embedding stage.
    const ModelSequence& seq = *trace.sequence;
    const Eigen::Index rows = d_hidden.rows();
    const int offset = config.with_bos ? 1 : 0;
    if (config.use_positions) {
        gi("embed.pos").topRows(rows) += d_hidden;
    }
    std::vector<char> is_masked(static_cast<std::size_t>(rows), 0);
    for (const int row : trace.masked_rows) {
        is_masked[static_cast<std::size_t>(row)] = 1;
        gi("embed.mask").row(0) += d_hidden.row(row);
    }
    if (config.with_bos && !is_masked[0]) {
        gi("embed.bos").row(0) += d_hidden.row(0);
    }
    if (config.input_mode == InputMode::Discrete) {
        auto& d_table = gi("embed.in");
        for (Eigen::Index t = offset; t < rows; ++t) {
            if (is_masked[static_cast<std::size_t>(t)]) continue;
            d_table.row(seq.input_units[static_cast<std::size_t>(t - offset)]) +=
                d_hidden.row(t);
        }
    } else {
        auto& d_w = gi("in.w");
        auto& d_b = gi("in.b");
        for (Eigen::Index t = offset; t < rows; ++t) {
            if (is_masked[static_cast<std::size_t>(t)]) continue;
            d_w += d_hidden.row(t).transpose() * seq.input_features.row(t - offset);
            d_b.row(0) += d_hidden.row(t);
        }
    }
}

void backward(const ModelParams& params, const EncoderTrace& trace,
              const Eigen::MatrixXd& d_outputs, Gradients& grads) {
    const ModelConfig& config = params.config;
    const auto gi = [&](const std::string& name) -> Eigen::MatrixXd& {
        return grads[params.index_of(name)];
    };
    Eigen::MatrixXd d_final;
    switch (config.loss) {
        case LossKind::NllL: {
            gi("cls.w") += d_outputs.transpose() * trace.final_hidden;
            gi("cls.b") += d_outputs.colwise().sum();
            d_final = d_outputs * params.block("cls.w");
            break;
        }
        case LossKind::NllE: {
            const Eigen::MatrixXd d_cos = d_outputs / config.temperature;
            // Per-row weights for the "along the direction" correction.
            const Eigen::VectorXd row_along =
                d_cos.cwiseProduct(trace.cosines).rowwise().sum();
            const Eigen::VectorXd col_along =
                d_cos.cwiseProduct(trace.cosines).colwise().sum().transpose();

            Eigen::MatrixXd d_proj = d_cos * trace.unit_dirs;
            d_proj -= row_along.asDiagonal() * trace.proj_dirs;
            d_proj.array().colwise() /= trace.proj_norms.array();

            Eigen::MatrixXd d_units = d_cos.transpose() * trace.proj_dirs;
            d_units -= col_along.asDiagonal() * trace.unit_dirs;
            d_units.array().colwise() /= trace.unit_norms.array();

            const std::string unit_block =
                config.tied_unit_embeddings() ? "embed.in" : "embed.unit";
            gi(unit_block) += d_units;

            gi("proj.w") += d_proj.transpose() * trace.final_hidden;
            gi("proj.b") += d_proj.colwise().sum();
            d_final = d_proj * params.block("proj.w");
            break;
        }
        default: {
            gi("reg.w") += d_outputs.transpose() * trace.final_hidden;
            gi("reg.b") += d_outputs.colwise().sum();
            d_final = d_outputs * params.block("reg.w");
            break;
        }
    }
    backward_from_final_hidden(params, trace, d_final, grads);
}

// ---------------------------------------------------------------------------
// Parameter file I/O

namespace {

constexpr std::array<char, 4> kModelMagic = {'Z', 'M', 'L', 'M'};
constexpr std::uint32_t kModelVersion = 1;

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

std::string config_to_text(const ModelConfig& c) {
    std::ostringstream out;
    char tau[64];
    std::snprintf(tau, sizeof(tau), "%.17g", c.temperature);
    out << "input_mode = " << to_string(c.input_mode) << '\n'
        << "target_mode = " << to_string(c.target_mode) << '\n'
        << "loss = " << to_string(c.loss) << '\n'
        << "vocab_size = " << c.vocab_size << '\n'
        << "feature_dim = " << c.feature_dim << '\n'
        << "model_dim = " << c.model_dim << '\n'
        << "layers = " << c.layers << '\n'
        << "heads = " << c.heads << '\n'
        << "ffn_mult = " << c.ffn_mult << '\n'
        << "max_seq_len = " << c.max_seq_len << '\n'
        << "nce_negatives = " << c.nce_negatives << '\n'
        << "temperature = " << tau << '\n'
        << "use_positions = " << (c.use_positions ? "true" : "false") << '\n'
        << "tie_target_embeddings = " << (c.tie_target_embeddings ? "true" : "false") << '\n'
        << "with_bos = " << (c.with_bos ? "true" : "false") << '\n'
        << "num_classes = " << c.num_classes << '\n';
    return out.str();
}

ModelConfig config_from_text(const std::string& text) {
    const Config cfg = Config::parse_string(text, "<model header>");
    ModelConfig c;
    c.input_mode = input_mode_from_string(cfg.get_str("input_mode"));
    c.target_mode = target_mode_from_string(cfg.get_str("target_mode"));
    c.loss = loss_kind_from_string(cfg.get_str("loss"));
    c.vocab_size = static_cast<int>(cfg.get_int("vocab_size"));
    c.feature_dim = static_cast<int>(cfg.get_int("feature_dim"));
    c.model_dim = static_cast<int>(cfg.get_int("model_dim"));
    c.layers = static_cast<int>(cfg.get_int("layers"));
    c.heads = static_cast<int>(cfg.get_int("heads"));
    c.ffn_mult = static_cast<int>(cfg.get_int("ffn_mult"));
    c.max_seq_len = static_cast<int>(cfg.get_int("max_seq_len"));
    c.nce_negatives = static_cast<int>(cfg.get_int("nce_negatives"));
    c.temperature = cfg.get_double("temperature");
    c.use_positions = cfg.get_bool("use_positions");
    c.tie_target_embeddings = cfg.get_bool("tie_target_embeddings");
    c.with_bos = cfg.get_bool("with_bos");
    c.num_classes = static_cast<int>(cfg.get_int("num_classes"));
    c.validate();
    return c;
}

}  // namespace

ModelParams read_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path.string());
    std::array<char, 4> magic;
    if (!in.read(magic.data(), 4) || magic != kModelMagic) {
        throw FormatError("not a model file (bad magic): " + path.string());
    }
    const std::uint32_t version = get_u32(in, "version");
    if (version != kModelVersion) {
        throw FormatError("unsupported model version " + std::to_string(version));
    }
    const std::uint32_t config_len = get_u32(in, "config length");
    std::string config_text(config_len, '\0');
    if (!in.read(config_text.data(), config_len)) {
        throw CorruptionError("truncated model config in " + path.string());
    }
    const ModelConfig config = config_from_text(config_text);
    ModelParams params = ModelParams::init(config, 0);

    const std::uint32_t n_blocks = get_u32(in, "block count");
    if (n_blocks != params.values.size()) {
        throw CorruptionError("model file has " + std::to_string(n_blocks) +
                              " blocks, config implies " + std::to_string(params.values.size()));
    }
    for (std::uint32_t b = 0; b < n_blocks; ++b) {
        const std::uint32_t name_len = get_u32(in, "block name length");
        std::string name(name_len, '\0');
        if (!in.read(name.data(), name_len)) throw CorruptionError("truncated block name");
        if (name != params.names[b]) {
            throw CorruptionError("unexpected block '" + name + "', expected '" +
                                  params.names[b] + "'");
        }
        const std::uint32_t rows = get_u32(in, "block rows");
        const std::uint32_t cols = get_u32(in, "block cols");
        Eigen::MatrixXd& m = params.values[b];
        if (rows != static_cast<std::uint32_t>(m.rows()) ||
            cols != static_cast<std::uint32_t>(m.cols())) {
            throw CorruptionError("block '" + name + "' has unexpected shape");
        }
        for (std::uint32_t i = 0; i < rows; ++i) {
            for (std::uint32_t j = 0; j < cols; ++j) {
                const std::uint32_t bits = get_u32(in, "block payload");
                float v;
                std::memcpy(&v, &bits, 4);
                m(i, j) = static_cast<double>(v);
            }
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw CorruptionError("trailing bytes after payload in " + path.string());
    }
    return params;
}

void write_model(const ModelParams& params, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(kModelMagic.data(), 4);
    put_u32(out, kModelVersion);
    const std::string config_text = config_to_text(params.config);
    put_u32(out, static_cast<std::uint32_t>(config_text.size()));
    out.write(config_text.data(), static_cast<std::streamsize>(config_text.size()));
    put_u32(out, static_cast<std::uint32_t>(params.values.size()));
    for (std::size_t b = 0; b < params.values.size(); ++b) {
        const std::string& name = params.names[b];
        put_u32(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        const Eigen::MatrixXd& m = params.values[b];
        put_u32(out, static_cast<std::uint32_t>(m.rows()));
        put_u32(out, static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            for (Eigen::Index j = 0; j < m.cols(); ++j) {
                const float v = static_cast<float>(m(i, j));
                std::uint32_t bits;
                std::memcpy(&bits, &v, 4);
                put_u32(out, bits);
            }
        }
    }
    if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace slm
