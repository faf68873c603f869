#pragma once

// Training objectives and the optimizer: the autoregressive attention
// loss, masked-token (CMLM) loss, their joint combinations with the CTC
// term, mask sampling for CMLM training, and Adam with inverse-sqrt
// warmup.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include "maskctc/ctc.hpp"
#include "maskctc/errors.hpp"
#include "maskctc/model.hpp"
#include "maskctc/rng.hpp"
#include "maskctc/tensor.hpp"

namespace maskctc {

struct TrainConfig {
    ModelType model_type = ModelType::maskctc;
    float lambda_ar = 0.3f;   // CTC weight in the AR objective
    float gamma_nar = 0.3f;   // CTC weight in the NAR objective
    int epochs = 10;
    int batch_size = 16;
    float lr_peak = 1e-3f;
    int warmup_steps = 400;
    uint64_t seed = 1;
    float label_smoothing = 0.0f;

    void validate() const {
        if (lambda_ar < 0.0f || lambda_ar > 1.0f) throw ConfigError("lambda must be in [0, 1]");
        if (gamma_nar < 0.0f || gamma_nar > 1.0f) throw ConfigError("gamma must be in [0, 1]");
        if (epochs < 1 || batch_size < 1) throw ConfigError("epochs and batch_size must be positive");
        if (lr_peak <= 0.0f || warmup_steps < 1) throw ConfigError("lr_peak and warmup_steps must be positive");
        if (label_smoothing < 0.0f || label_smoothing >= 1.0f) throw ConfigError("label_smoothing must be in [0, 1)");
    }
};

// Negative mean log-likelihood of target class c_l at every position l.
// logp must be log-normalized rows; targets are class indices into the
// logit columns. Optional label smoothing mixes in the mean log-prob.
template <typename T>
TensorT<T> att_loss(const TensorT<T>& logp, const std::vector<int>& target_classes, double label_smoothing = 0.0) {
    if (logp.rank() != 2) throw ShapeError("att_loss expects [L, C] log-probs, got " + shape_str(logp.shape()));
    const int L = logp.dim(0);
    if (static_cast<int>(target_classes.size()) != L)
        throw ContractError("att_loss length mismatch: " + std::to_string(L) + " logit rows vs " +
                            std::to_string(target_classes.size()) + " targets");
    auto picked = pick(logp, target_classes);
    auto nll = scale(sum_all(picked), static_cast<T>(-1.0 / L));
    if (label_smoothing > 0.0) {
        auto uniform = scale(sum_all(logp), static_cast<T>(-1.0 / (static_cast<double>(L) * logp.dim(1))));
        return add(scale(nll, static_cast<T>(1.0 - label_smoothing)), scale(uniform, static_cast<T>(label_smoothing)));
    }
    return nll;
}

// Negative mean log-likelihood of the original classes at the masked
// positions only; logits at unmasked positions never contribute.
template <typename T>
TensorT<T> cmlm_loss(const TensorT<T>& logp, const std::vector<int>& target_classes,
                     const std::vector<int>& masked_positions, double label_smoothing = 0.0) {
    if (logp.rank() != 2) throw ShapeError("cmlm_loss expects [L, C] log-probs, got " + shape_str(logp.shape()));
    const int L = logp.dim(0);
    if (static_cast<int>(target_classes.size()) != L)
        throw ContractError("cmlm_loss length mismatch: " + std::to_string(L) + " logit rows vs " +
                            std::to_string(target_classes.size()) + " targets");
    if (masked_positions.empty()) throw ContractError("cmlm_loss requires at least one masked position");
    for (int pos : masked_positions)
        if (pos < 0 || pos >= L) throw ContractError("cmlm_loss masked position " + std::to_string(pos) + " out of range");
    auto rows = gather_rows(logp, masked_positions);  // [M, C]
    std::vector<int> cls;
    cls.reserve(masked_positions.size());
    for (int pos : masked_positions) cls.push_back(target_classes[static_cast<size_t>(pos)]);
    auto picked = pick(rows, cls);
    const double M = static_cast<double>(masked_positions.size());
    auto nll = scale(sum_all(picked), static_cast<T>(-1.0 / M));
    if (label_smoothing > 0.0) {
        auto uniform = scale(sum_all(rows), static_cast<T>(-1.0 / (M * logp.dim(1))));
        return add(scale(nll, static_cast<T>(1.0 - label_smoothing)), scale(uniform, static_cast<T>(label_smoothing)));
    }
    return nll;
}

// Number of positions to mask during CMLM training: uniform over
// {1, ..., L}. L == 0 returns 0, the skip-this-utterance signal.
inline int sample_mask_count(int L, Rng& rng) {
    if (L < 0) throw ContractError("sample_mask_count: negative length");
    if (L == 0) return 0;
    return rng.uniform_int(1, L);
}

// Replace exactly n distinct positions (uniform without replacement) by
// <MASK>. Partial Fisher-Yates on the index array.
inline MaskedSequence apply_training_masks(const std::vector<int>& y, int n, Rng& rng, int mask_id = Vocab::kMask) {
    const int L = static_cast<int>(y.size());
    if (n < 1 || n > L)
        throw ContractError("apply_training_masks: n=" + std::to_string(n) + " outside [1, " + std::to_string(L) + "]");
    std::vector<int> idx(static_cast<size_t>(L));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < n; ++i) {
        int j = rng.uniform_int(i, L - 1);
        std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    MaskedSequence ms;
    ms.tokens = y;
    ms.original_length = L;
    ms.masked_positions.assign(idx.begin(), idx.begin() + n);
    std::sort(ms.masked_positions.begin(), ms.masked_positions.end());
    for (int pos : ms.masked_positions) ms.tokens[static_cast<size_t>(pos)] = mask_id;
    return ms;
}

// -lambda * log P_ctc + (1 - lambda) * attention loss.
template <typename T>
TensorT<T> joint_ar_loss(const TensorT<T>& ctc_lp, const TensorT<T>& att_l, double lambda) {
    if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must be in [0, 1], got " + std::to_string(lambda));
    return add(scale(ctc_lp, static_cast<T>(-lambda)), scale(att_l, static_cast<T>(1.0 - lambda)));
}

// -gamma * log P_ctc + (1 - gamma) * CMLM loss.
template <typename T>
TensorT<T> joint_nar_loss(const TensorT<T>& ctc_lp, const TensorT<T>& cmlm_l, double gamma) {
    if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must be in [0, 1], got " + std::to_string(gamma));
    return add(scale(ctc_lp, static_cast<T>(-gamma)), scale(cmlm_l, static_cast<T>(1.0 - gamma)));
}

// Inverse-square-root schedule with linear warmup, normalized so the
// peak value is lr_peak at step == warmup:
//   lr(s) = lr_peak * sqrt(warmup) * min(1/sqrt(s), s * warmup^-1.5)
struct LrSchedule {
    double lr_peak = 1e-3;
    int warmup = 400;

    double lr(int64_t step) const {
        double s = static_cast<double>(std::max<int64_t>(step, 1));
        double w = static_cast<double>(warmup);
        return lr_peak * std::sqrt(w) * std::min(1.0 / std::sqrt(s), s * std::pow(w, -1.5));
    }
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-9;
};

struct TrainState {
    int64_t step = 0;
    std::map<std::string, std::vector<float>> m, v;

    struct EpochMetrics {
        int epoch = 0;
        double train_loss = 0.0;
        double dev_loss = 0.0;
        double dev_acc = 0.0;  // 1 - greedy-CTC token error rate on dev
        int skipped = 0;       // utterances with infeasible CTC targets
    };
    std::vector<EpochMetrics> history;
};

// One Adam update from the gradients accumulated in params' grad
// buffers; grads are zeroed afterwards. NaN gradients abort, naming the
// offending parameter.
inline void optimizer_step(ParamMap<float>& params, TrainState& state, const LrSchedule& sched,
                           const AdamConfig& adam = {}) {
    state.step += 1;
    const double lr = sched.lr(state.step);
    const double bc1 = 1.0 - std::pow(adam.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(adam.beta2, static_cast<double>(state.step));
    for (auto& [name, t] : params) {
        auto& g = t.grad();
        for (float gv : g)
            if (std::isnan(gv)) throw NumericError("NaN gradient in parameter '" + name + "'");
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != g.size()) m.assign(g.size(), 0.0f);
        if (v.size() != g.size()) v.assign(g.size(), 0.0f);
        auto& w = t.raw_values();
        for (size_t i = 0; i < g.size(); ++i) {
            double gi = g[i];
            double mi = adam.beta1 * m[i] + (1.0 - adam.beta1) * gi;
            double vi = adam.beta2 * v[i] + (1.0 - adam.beta2) * gi * gi;
            m[i] = static_cast<float>(mi);
            v[i] = static_cast<float>(vi);
            double mh = mi / bc1;
            double vh = vi / bc2;
            w[i] -= static_cast<float>(lr * mh / (std::sqrt(vh) + adam.eps));
        }
        t.zero_grad();
    }
}

// ---------------------------------------------------------------------------
// per-utterance loss assembly shared by the training loop and tests

struct UtteranceLossResult {
    TensorT<float> loss;   // undefined when skipped
    bool skipped = false;  // infeasible CTC target
};

// Builds the full loss graph for one utterance according to the model
// type. CTC log-prob is normalized per token (divided by max(L, 1)) so
// the lambda/gamma weights mean the same thing across lengths.
template <typename T>
TensorT<T> utterance_loss(const BoundModel<T>& bound, const FeatureSeq& feats, const std::vector<int>& y,
                          const TrainConfig& tc, Rng& mask_rng, bool* skipped = nullptr) {
    if (skipped) *skipped = false;
    auto enc = encode(bound, feats);
    auto lp = ctc_head(bound, enc);
    if (!ctc_feasible(lp.dim(0), y)) {
        if (skipped) *skipped = true;
        return TensorT<T>();
    }
    const int L = static_cast<int>(y.size());
    auto ctc_norm = scale(ctc_log_prob(lp, y), static_cast<T>(1.0 / std::max(L, 1)));
    switch (tc.model_type) {
        case ModelType::ctc_only:
            return neg(ctc_norm);
        case ModelType::ar_joint: {
            std::vector<int> dec_in, target_cls;
            dec_in.push_back(Vocab::kSos);
            for (int t : y) dec_in.push_back(t);
            for (int t : y) target_cls.push_back(Vocab::dec_class_of(t));
            target_cls.push_back(Vocab::dec_class_of(Vocab::kEos));
            auto logits = decode_step(bound, dec_in, enc, /*causal=*/true);
            auto att = att_loss(logits, target_cls, tc.label_smoothing);
            return joint_ar_loss(ctc_norm, att, tc.lambda_ar);
        }
        case ModelType::maskctc: {
            int n = sample_mask_count(L, mask_rng);
            if (n == 0) {
                if (skipped) *skipped = true;
                return TensorT<T>();
            }
            auto ms = apply_training_masks(y, n, mask_rng);
            std::vector<int> target_cls;
            for (int t : y) target_cls.push_back(Vocab::dec_class_of(t));
            auto logits = decode_step(bound, ms.tokens, enc, /*causal=*/false);
            auto cmlm = cmlm_loss(logits, target_cls, ms.masked_positions, tc.label_smoothing);
            return joint_nar_loss(ctc_norm, cmlm, tc.gamma_nar);
        }
    }
    throw ContractError("unhandled model type");
}

}  // namespace maskctc
