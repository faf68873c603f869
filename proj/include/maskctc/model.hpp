#pragma once

// Transformer encoder-decoder with a CTC head on the encoder and a
// token head on the decoder. The same decoder weights serve the
// autoregressive baseline (causal self-attention over <sos>-prefixed
// history) and the masked-prediction decoder (bidirectional
// self-attention over a partially masked sequence); a training run only
// ever uses one of the two behaviors.
//
// Layers are pre-norm with a final layer norm on both stacks. Input
// downsampling stacks `downsample_factor` consecutive frames and projects
// them linearly; positions are fixed sinusoids. Both output heads are
// zero-initialized, so an untrained model scores every class uniformly.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "maskctc/errors.hpp"
#include "maskctc/features.hpp"
#include "maskctc/rng.hpp"
#include "maskctc/tensor.hpp"
#include "maskctc/vocab.hpp"

namespace maskctc {

struct ModelConfig {
    int enc_layers = 4;
    int dec_layers = 2;
    int heads = 4;
    int d_model = 64;
    int d_ff = 256;
    int downsample_factor = 4;
    float dropout_rate = 0.1f;

    void validate() const {
        if (d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
        if (enc_layers < 1 || heads < 1 || d_model < 1 || d_ff < 1 || downsample_factor < 1)
            throw ConfigError("model dimensions must be positive");
        if (dropout_rate < 0.0f || dropout_rate >= 1.0f) throw ConfigError("dropout_rate must be in [0, 1)");
    }
};

enum class ModelType { ctc_only, ar_joint, maskctc };

inline const char* model_type_name(ModelType t) {
    switch (t) {
        case ModelType::ctc_only: return "ctc_only";
        case ModelType::ar_joint: return "ar_joint";
        case ModelType::maskctc: return "maskctc";
    }
    return "?";
}

inline ModelType model_type_from_name(const std::string& s) {
    if (s == "ctc_only") return ModelType::ctc_only;
    if (s == "ar_joint") return ModelType::ar_joint;
    if (s == "maskctc") return ModelType::maskctc;
    throw ConfigError("unknown model_type '" + s + "'");
}

inline bool has_decoder(ModelType t) { return t != ModelType::ctc_only; }

template <typename T>
using ParamMap = std::map<std::string, TensorT<T>>;

// Closed-form parameter count for a given config (see README for the
// derivation); asserted against the actual parameter set in tests.
inline int64_t expected_param_count(const ModelConfig& cfg, int vocab_size, int feat_dim, ModelType type) {
    int64_t d = cfg.d_model, dff = cfg.d_ff, N = vocab_size;
    int64_t enc_layer = 4 * d * d + 4 * d + 2 * (2 * d) + (d * dff + dff) + (dff * d + d);
    int64_t total = (static_cast<int64_t>(cfg.downsample_factor) * feat_dim * d + d)  // frontend
                    + cfg.enc_layers * enc_layer + 2 * d                              // encoder + final norm
                    + (d * N + N);                                                    // ctc head
    if (has_decoder(type)) {
        int64_t dec_layer = 8 * d * d + 8 * d + 3 * (2 * d) + (d * dff + dff) + (dff * d + d);
        total += N * d                          // token embedding
                 + cfg.dec_layers * dec_layer + 2 * d
                 + (d * (N - 1) + (N - 1));     // output head over non-blank classes
    }
    return total;
}

namespace detail {

template <typename T>
void put_param(ParamMap<T>& p, const std::string& name, Shape shape, std::vector<T> data) {
    p.emplace(name, TensorT<T>::param(std::move(shape), std::move(data)));
}

template <typename T>
std::vector<T> glorot(int fan_in, int fan_out, Rng& rng) {
    double a = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<T> v(static_cast<size_t>(fan_in) * fan_out);
    for (auto& x : v) x = static_cast<T>((rng.uniform() * 2.0 - 1.0) * a);
    return v;
}

template <typename T>
void put_linear(ParamMap<T>& p, const std::string& prefix, int fan_in, int fan_out, Rng& rng) {
    put_param(p, prefix + ".W", {fan_in, fan_out}, glorot<T>(fan_in, fan_out, rng));
    put_param(p, prefix + ".b", {fan_out}, std::vector<T>(static_cast<size_t>(fan_out), T(0)));
}

template <typename T>
void put_norm(ParamMap<T>& p, const std::string& prefix, int d) {
    put_param(p, prefix + ".g", {d}, std::vector<T>(static_cast<size_t>(d), T(1)));
    put_param(p, prefix + ".b", {d}, std::vector<T>(static_cast<size_t>(d), T(0)));
}

template <typename T>
void put_attention(ParamMap<T>& p, const std::string& prefix, int d, Rng& rng) {
    put_linear(p, prefix + ".q", d, d, rng);
    put_linear(p, prefix + ".k", d, d, rng);
    put_linear(p, prefix + ".v", d, d, rng);
    put_linear(p, prefix + ".o", d, d, rng);
}

template <typename T>
void put_ff(ParamMap<T>& p, const std::string& prefix, int d, int dff, Rng& rng) {
    put_linear(p, prefix + ".1", d, dff, rng);
    put_linear(p, prefix + ".2", dff, d, rng);
}

// Sinusoidal position table, the standard sin/cos interleaving.
template <typename T>
TensorT<T> position_encoding(int len, int d) {
    std::vector<T> pe(static_cast<size_t>(len) * d);
    for (int pos = 0; pos < len; ++pos) {
        for (int i = 0; i < d; i += 2) {
            double freq = std::exp(-std::log(10000.0) * i / d);
            double angle = pos * freq;
            pe[static_cast<size_t>(pos) * d + i] = static_cast<T>(std::sin(angle));
            if (i + 1 < d) pe[static_cast<size_t>(pos) * d + i + 1] = static_cast<T>(std::cos(angle));
        }
    }
    return TensorT<T>::constant({len, d}, std::move(pe));
}

}  // namespace detail

template <typename T>
ParamMap<T> init_params(const ModelConfig& cfg, const Vocab& vocab, int feat_dim, ModelType type, Rng rng) {
    cfg.validate();
    ParamMap<T> p;
    const int d = cfg.d_model, dff = cfg.d_ff, N = vocab.size();
    detail::put_linear(p, "frontend.proj", cfg.downsample_factor * feat_dim, d, rng);
    for (int i = 0; i < cfg.enc_layers; ++i) {
        std::string pre = "enc." + std::to_string(i);
        detail::put_norm(p, pre + ".norm1", d);
        detail::put_attention(p, pre + ".attn", d, rng);
        detail::put_norm(p, pre + ".norm2", d);
        detail::put_ff(p, pre + ".ff", d, dff, rng);
    }
    detail::put_norm(p, "enc.norm", d);
    // zero-init head: untrained model scores all classes equally
    detail::put_param(p, "ctc.W", {d, N}, std::vector<T>(static_cast<size_t>(d) * N, T(0)));
    detail::put_param(p, "ctc.b", {N}, std::vector<T>(static_cast<size_t>(N), T(0)));

    if (has_decoder(type)) {
        std::vector<T> emb(static_cast<size_t>(N) * d);
        double s = 1.0 / std::sqrt(static_cast<double>(d));
        for (auto& x : emb) x = static_cast<T>(rng.normal(0.0, s));
        detail::put_param(p, "dec.embed", {N, d}, std::move(emb));
        for (int i = 0; i < cfg.dec_layers; ++i) {
            std::string pre = "dec." + std::to_string(i);
            detail::put_norm(p, pre + ".norm1", d);
            detail::put_attention(p, pre + ".self", d, rng);
            detail::put_norm(p, pre + ".norm2", d);
            detail::put_attention(p, pre + ".cross", d, rng);
            detail::put_norm(p, pre + ".norm3", d);
            detail::put_ff(p, pre + ".ff", d, dff, rng);
        }
        detail::put_norm(p, "dec.norm", d);
        int C = vocab.dec_classes();
        detail::put_param(p, "dec.out.W", {d, C}, std::vector<T>(static_cast<size_t>(d) * C, T(0)));
        detail::put_param(p, "dec.out.b", {C}, std::vector<T>(static_cast<size_t>(C), T(0)));
    }
    return p;
}

template <typename T>
int64_t param_count(const ParamMap<T>& p) {
    int64_t n = 0;
    for (const auto& [name, t] : p) n += t.numel();
    return n;
}

// A model bound for one computation graph: fresh leaf tensors per call
// site so utterances can be processed on independent threads and their
// gradients harvested in a fixed order afterwards.
template <typename T>
struct BoundModel {
    ModelConfig cfg;
    Vocab vocab;
    ModelType type = ModelType::maskctc;
    ParamMap<T> p;
    bool training = false;
    Rng* rng = nullptr;  // dropout stream, required when training

    const TensorT<T>& at(const std::string& name) const {
        auto it = p.find(name);
        if (it == p.end()) throw ContractError("missing parameter '" + name + "'");
        return it->second;
    }

    TensorT<T> maybe_dropout(const TensorT<T>& x) const {
        if (!training || cfg.dropout_rate == 0.0f) return x;
        if (!rng) throw ContractError("training-mode forward needs an rng for dropout");
        return dropout(x, static_cast<double>(cfg.dropout_rate), *rng);
    }
};

namespace detail {

template <typename T>
TensorT<T> linear(const BoundModel<T>& m, const std::string& prefix, const TensorT<T>& x) {
    return add(matmul(x, m.at(prefix + ".W")), m.at(prefix + ".b"));
}

// Multi-head attention. q_in: [Lq, d]; kv_in: [Lk, d]; optional additive
// score mask [Lq, Lk] broadcast over heads.
template <typename T>
TensorT<T> attention(const BoundModel<T>& m, const std::string& prefix, const TensorT<T>& q_in,
                     const TensorT<T>& kv_in, const TensorT<T>* score_mask) {
    const int heads = m.cfg.heads;
    const int dk = m.cfg.d_model / heads;
    auto q = split_heads(linear(m, prefix + ".q", q_in), heads);  // [h, Lq, dk]
    auto k = split_heads(linear(m, prefix + ".k", kv_in), heads);
    auto v = split_heads(linear(m, prefix + ".v", kv_in), heads);
    auto scores = scale(matmul(q, transpose_last2(k)), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk))));
    if (score_mask) scores = add(scores, *score_mask);  // [h, Lq, Lk] + [Lq, Lk]
    auto att = m.maybe_dropout(softmax(scores));
    return linear(m, prefix + ".o", merge_heads(matmul(att, v)));
}

template <typename T>
TensorT<T> feed_forward(const BoundModel<T>& m, const std::string& prefix, const TensorT<T>& x) {
    return linear(m, prefix + ".2", relu(linear(m, prefix + ".1", x)));
}

template <typename T>
TensorT<T> causal_score_mask(int len) {
    const T ninf = -std::numeric_limits<T>::infinity();
    std::vector<T> mask(static_cast<size_t>(len) * len, T(0));
    for (int i = 0; i < len; ++i)
        for (int j = i + 1; j < len; ++j) mask[static_cast<size_t>(i) * len + j] = ninf;
    return TensorT<T>::constant({len, len}, std::move(mask));
}

}  // namespace detail

// Frame-stacked, linearly projected, position-encoded input followed by
// the self-attention stack. Output length T' = floor(T / factor).
template <typename T>
TensorT<T> encode(const BoundModel<T>& m, const FeatureSeq& x) {
    const int k = m.cfg.downsample_factor;
    if (x.frames < k)
        throw ContractError("input too short: " + std::to_string(x.frames) + " frames < downsample factor " +
                            std::to_string(k));
    const int tp = x.frames / k;
    const int d_in = k * x.dim;
    std::vector<T> stacked(static_cast<size_t>(tp) * d_in);
    for (int t = 0; t < tp; ++t)
        for (int j = 0; j < d_in; ++j)
            stacked[static_cast<size_t>(t) * d_in + j] =
                static_cast<T>(x.data[static_cast<size_t>(t) * d_in + j]);
    auto h = detail::linear(m, "frontend.proj", TensorT<T>::constant({tp, d_in}, std::move(stacked)));
    h = m.maybe_dropout(add(h, detail::position_encoding<T>(tp, m.cfg.d_model)));
    for (int i = 0; i < m.cfg.enc_layers; ++i) {
        std::string pre = "enc." + std::to_string(i);
        auto a = layer_norm(h, m.at(pre + ".norm1.g"), m.at(pre + ".norm1.b"), static_cast<T>(1e-5));
        h = add(h, m.maybe_dropout(detail::attention(m, pre + ".attn", a, a, static_cast<const TensorT<T>*>(nullptr))));
        auto f = layer_norm(h, m.at(pre + ".norm2.g"), m.at(pre + ".norm2.b"), static_cast<T>(1e-5));
        h = add(h, m.maybe_dropout(detail::feed_forward(m, pre + ".ff", f)));
    }
    return layer_norm(h, m.at("enc.norm.g"), m.at("enc.norm.b"), static_cast<T>(1e-5));
}

// Per-frame log-distribution over all vocab classes including <blank>.
template <typename T>
TensorT<T> ctc_head(const BoundModel<T>& m, const TensorT<T>& enc) {
    return log_softmax(detail::linear(m, "ctc", enc));
}

// Position-wise log-distributions over the non-blank classes
// (class c <-> token id c+1).
//
// causal=true: y_in is an <sos>-prefixed history; self-attention is
// masked so position l sees positions <= l, giving the left-to-right
// chain-rule factorization when logits[l] is paired with the token at
// l+1. causal=false: y_in is a (possibly <MASK>-bearing) full-length
// sequence and self-attention is unrestricted.
template <typename T>
TensorT<T> decode_step(const BoundModel<T>& m, const std::vector<int>& y_in, const TensorT<T>& enc, bool causal) {
    if (!has_decoder(m.type)) throw ContractError("model of type ctc_only has no decoder");
    if (y_in.empty()) throw ContractError("decode_step needs at least one input token");
    const int L = static_cast<int>(y_in.size());
    for (int t : y_in) {
        if (t < 0 || t >= m.vocab.size())
            throw ContractError("decode_step: token id " + std::to_string(t) + " out of range");
        if (causal && t == Vocab::kMask) throw ContractError("decode_step: <MASK> not permitted in causal mode");
    }
    auto h = scale(gather_rows(m.at("dec.embed"), y_in), static_cast<T>(std::sqrt(static_cast<double>(m.cfg.d_model))));
    h = m.maybe_dropout(add(h, detail::position_encoding<T>(L, m.cfg.d_model)));
    TensorT<T> mask;
    if (causal) mask = detail::causal_score_mask<T>(L);
    for (int i = 0; i < m.cfg.dec_layers; ++i) {
        std::string pre = "dec." + std::to_string(i);
        auto a = layer_norm(h, m.at(pre + ".norm1.g"), m.at(pre + ".norm1.b"), static_cast<T>(1e-5));
        h = add(h, m.maybe_dropout(detail::attention(m, pre + ".self", a, a, causal ? &mask : nullptr)));
        auto c = layer_norm(h, m.at(pre + ".norm2.g"), m.at(pre + ".norm2.b"), static_cast<T>(1e-5));
        h = add(h, m.maybe_dropout(detail::attention(m, pre + ".cross", c, enc, static_cast<const TensorT<T>*>(nullptr))));
        auto f = layer_norm(h, m.at(pre + ".norm3.g"), m.at(pre + ".norm3.b"), static_cast<T>(1e-5));
        h = add(h, m.maybe_dropout(detail::feed_forward(m, pre + ".ff", f)));
    }
    h = layer_norm(h, m.at("dec.norm.g"), m.at("dec.norm.b"), static_cast<T>(1e-5));
    return log_softmax(detail::linear(m, "dec.out", h));
}

// Master model: float parameters plus everything needed to rebuild a
// BoundModel. Parameter values are copied at bind time so concurrent
// utterance graphs never share mutable state.
struct Model {
    ModelConfig cfg;
    Vocab vocab;
    int feat_dim = 0;
    ModelType type = ModelType::maskctc;
    ParamMap<float> params;

    static Model init(const ModelConfig& cfg, const Vocab& vocab, int feat_dim, ModelType type, uint64_t seed) {
        Model m;
        m.cfg = cfg;
        m.vocab = vocab;
        m.feat_dim = feat_dim;
        m.type = type;
        m.params = init_params<float>(cfg, vocab, feat_dim, type, Rng(seed));
        return m;
    }

    template <typename T>
    BoundModel<T> bind(bool training = false, Rng* rng = nullptr) const {
        BoundModel<T> b;
        b.cfg = cfg;
        b.vocab = vocab;
        b.type = type;
        b.training = training;
        b.rng = rng;
        for (const auto& [name, t] : params) {
            std::vector<T> v(t.values().size());
            for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<T>(t.values()[i]);
            b.p.emplace(name, training ? TensorT<T>::param(t.shape(), std::move(v))
                                       : TensorT<T>::constant(t.shape(), std::move(v)));
        }
        return b;
    }

    // Adds the bound graph's leaf gradients into the master grad buffers.
    void harvest_grads(const BoundModel<float>& b, float scale_by = 1.0f) {
        for (auto& [name, t] : params) {
            auto it = b.p.find(name);
            if (it == b.p.end()) throw ContractError("harvest: bound model missing '" + name + "'");
            const auto& src = it->second.node()->grad;
            if (src.empty()) continue;
            auto& dst = t.grad();
            for (size_t i = 0; i < dst.size(); ++i) dst[i] += scale_by * src[i];
        }
    }

    void zero_grads() {
        for (auto& [name, t] : params) t.zero_grad();
    }
};

}  // namespace maskctc
