#pragma once

// CTC machinery: the collapse function, the exact log-space forward
// recursion for sequence log-probability, greedy alignment decoding with
// per-token confidences, and confidence-threshold masking.

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "maskctc/errors.hpp"
#include "maskctc/tensor.hpp"
#include "maskctc/vocab.hpp"

namespace maskctc {

struct Alignment {
    std::vector<int> labels;            // length T', over vocab ids incl. <blank>
    std::vector<double> frame_log_probs;  // winning log-prob per frame
};

struct TokenConfidence {
    std::vector<int> tokens;                    // collapse(labels)
    std::vector<double> confidences;            // probability space, (0, 1]
    std::vector<std::pair<int, int>> runs;      // (start frame, length) per token
    int length() const { return static_cast<int>(tokens.size()); }
};

struct MaskedSequence {
    std::vector<int> tokens;            // <MASK> at masked slots
    std::vector<int> masked_positions;  // ascending
    int original_length = 0;
};

// Merge consecutive duplicates, then drop blanks.
inline std::vector<int> collapse(const std::vector<int>& labels, int blank = Vocab::kBlank) {
    std::vector<int> out;
    int prev = -1;
    for (int l : labels) {
        if (l != prev && l != blank) out.push_back(l);
        prev = l;
    }
    return out;
}

inline int count_adjacent_repeats(const std::vector<int>& y) {
    int r = 0;
    for (size_t i = 1; i < y.size(); ++i)
        if (y[i] == y[i - 1]) ++r;
    return r;
}

// A target is reachable iff there are enough frames for every token plus
// a separating blank between adjacent repeats.
inline bool ctc_feasible(int frames, const std::vector<int>& y) {
    return frames >= static_cast<int>(y.size()) + count_adjacent_repeats(y);
}

// log P(y | lp) marginalized over all alignments that collapse to y,
// computed with the blank-interleaved 2L+1-state forward recursion in log
// space. Built from differentiable ops, so reverse-mode AD through the
// recursion yields d/d lp. Infeasible targets give exactly -inf (no
// error); NaN input is a numeric error.
template <typename T>
TensorT<T> ctc_log_prob(const TensorT<T>& lp, const std::vector<int>& y, int blank = Vocab::kBlank) {
    if (lp.rank() != 2) throw ShapeError("ctc_log_prob expects [T, C] log-probs, got " + shape_str(lp.shape()));
    const int frames = lp.dim(0);
    const int classes = lp.dim(1);
    for (T v : lp.values())
        if (std::isnan(static_cast<double>(v))) throw NumericError("ctc_log_prob: NaN in input log-probs");
    for (int t : y) {
        if (t < 0 || t >= classes) throw ContractError("ctc_log_prob: target id " + std::to_string(t) + " out of range");
        if (t == blank) throw ContractError("ctc_log_prob: target contains the blank symbol");
    }
    const T ninf = -std::numeric_limits<T>::infinity();
    if (!ctc_feasible(frames, y)) return TensorT<T>::constant({1}, {ninf});

    const int L = static_cast<int>(y.size());
    const int S = 2 * L + 1;
    std::vector<int> ext(static_cast<size_t>(S), blank);
    for (int l = 0; l < L; ++l) ext[static_cast<size_t>(2 * l + 1)] = y[static_cast<size_t>(l)];

    auto g = gather_cols(lp, ext);  // [T, S]

    // initial states: blank or first token
    std::vector<T> init(static_cast<size_t>(S), ninf);
    init[0] = T(0);
    if (S > 1) init[1] = T(0);
    auto row0 = reshape(slice_rows(g, 0, 1), {S});
    auto alpha = add(row0, TensorT<T>::constant({S}, std::move(init)));

    // skip transition allowed into state s only across a blank between
    // distinct tokens
    TensorT<T> skip_mask;
    if (S > 2) {
        std::vector<T> m(static_cast<size_t>(S), ninf);
        for (int s = 2; s < S; ++s)
            if (ext[static_cast<size_t>(s)] != blank && ext[static_cast<size_t>(s)] != ext[static_cast<size_t>(s - 2)])
                m[static_cast<size_t>(s)] = T(0);
        skip_mask = TensorT<T>::constant({S}, std::move(m));
    }
    auto pad1 = TensorT<T>::constant({1}, {ninf});
    auto pad2 = TensorT<T>::constant({2}, {ninf, ninf});

    for (int t = 1; t < frames; ++t) {
        auto acc = alpha;
        if (S > 1) {
            auto shifted1 = concat_rows(pad1, slice_rows(alpha, 0, S - 1));
            acc = logaddexp(acc, shifted1);
        }
        if (S > 2) {
            auto shifted2 = add(concat_rows(pad2, slice_rows(alpha, 0, S - 2)), skip_mask);
            acc = logaddexp(acc, shifted2);
        }
        alpha = add(acc, reshape(slice_rows(g, t, 1), {S}));
    }

    if (S == 1) return alpha;
    auto last = slice_rows(alpha, S - 1, 1);
    auto prev = slice_rows(alpha, S - 2, 1);
    return logaddexp(last, prev);
}

// Greedy alignment: per-frame argmax (ties to the lowest index), collapse
// to tokens, and per-token confidence = max over the token's run of the
// frame probability. A run is a maximal block of identical non-blank
// argmax labels; blanks terminate runs, so a blank between equal labels
// yields two tokens.
template <typename T>
TokenConfidence ctc_greedy(const TensorT<T>& lp, int blank = Vocab::kBlank) {
    if (lp.rank() != 2) throw ShapeError("ctc_greedy expects [T, C] log-probs, got " + shape_str(lp.shape()));
    const int frames = lp.dim(0);
    const int classes = lp.dim(1);
    const T* v = lp.values().data();

    Alignment ali;
    ali.labels.resize(static_cast<size_t>(frames));
    ali.frame_log_probs.resize(static_cast<size_t>(frames));
    for (int t = 0; t < frames; ++t) {
        const T* row = v + static_cast<int64_t>(t) * classes;
        int best = 0;
        for (int c = 1; c < classes; ++c)
            if (row[c] > row[best]) best = c;
        ali.labels[static_cast<size_t>(t)] = best;
        ali.frame_log_probs[static_cast<size_t>(t)] = static_cast<double>(row[best]);
    }

    TokenConfidence tc;
    int t = 0;
    while (t < frames) {
        int label = ali.labels[static_cast<size_t>(t)];
        if (label == blank) {
            ++t;
            continue;
        }
        int start = t;
        double best_lp = ali.frame_log_probs[static_cast<size_t>(t)];
        while (t + 1 < frames && ali.labels[static_cast<size_t>(t + 1)] == label) {
            ++t;
            best_lp = std::max(best_lp, ali.frame_log_probs[static_cast<size_t>(t)]);
        }
        tc.tokens.push_back(label);
        tc.confidences.push_back(std::exp(best_lp));
        tc.runs.emplace_back(start, t - start + 1);
        ++t;
    }
    return tc;
}

// Masks every position whose confidence falls strictly below the
// threshold; p_thres = 0 therefore masks nothing.
inline MaskedSequence mask_by_confidence(const TokenConfidence& tc, double p_thres, int mask_id = Vocab::kMask) {
    if (p_thres < 0.0 || p_thres > 1.0)
        throw ConfigError("p_thres must be in [0, 1], got " + std::to_string(p_thres));
    MaskedSequence ms;
    ms.tokens = tc.tokens;
    ms.original_length = tc.length();
    for (int l = 0; l < tc.length(); ++l) {
        if (tc.confidences[static_cast<size_t>(l)] < p_thres) {
            ms.tokens[static_cast<size_t>(l)] = mask_id;
            ms.masked_positions.push_back(l);
        }
    }
    return ms;
}

}  // namespace maskctc
