#pragma once

// Shared test helpers: independent oracles (finite differences,
// brute-force CTC enumeration, recursive edit distance) and small random
// input builders. Everything here is deliberately written on a separate
// path from the library implementation it checks.

#include <cmath>
#include <functional>
#include <vector>

#include "maskctc/rng.hpp"
#include "maskctc/tensor.hpp"

namespace testutil {

// Central finite differences of f at x, step h. f re-evaluates the whole
// computation from plain values.
inline std::vector<double> fd_grad(std::vector<double> x, const std::function<double(const std::vector<double>&)>& f,
                                   double h = 1e-4) {
    std::vector<double> g(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        double keep = x[i];
        x[i] = keep + h;
        double fp = f(x);
        x[i] = keep - h;
        double fm = f(x);
        x[i] = keep;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

// max over elements of |a-b| / max(|a|, |b|, floor)
inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b, double floor = 1e-6) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        double denom = std::max({std::fabs(a[i]), std::fabs(b[i]), floor});
        worst = std::max(worst, std::fabs(a[i] - b[i]) / denom);
    }
    return worst;
}

inline std::vector<double> random_vec(size_t n, maskctc::Rng& rng, double scale = 1.0) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal(0.0, scale);
    return v;
}

// Brute-force CTC: enumerate every alignment in (classes)^frames, collapse
// it, and sum the linear-space probabilities of those matching y.
// Returns log of the sum (-inf when nothing matches).
inline double ctc_brute_force(const std::vector<double>& lp, int frames, int classes, const std::vector<int>& y,
                              int blank = 0) {
    double total = 0.0;
    std::vector<int> ali(static_cast<size_t>(frames), 0);
    int64_t count = 1;
    for (int t = 0; t < frames; ++t) count *= classes;
    for (int64_t code = 0; code < count; ++code) {
        int64_t c = code;
        for (int t = 0; t < frames; ++t) {
            ali[static_cast<size_t>(t)] = static_cast<int>(c % classes);
            c /= classes;
        }
        // collapse: merge repeats then drop blanks
        std::vector<int> collapsed;
        int prev = -1;
        for (int a : ali) {
            if (a != prev && a != blank) collapsed.push_back(a);
            prev = a;
        }
        if (collapsed != y) continue;
        double p = 1.0;
        for (int t = 0; t < frames; ++t) p *= std::exp(lp[static_cast<size_t>(t) * classes + ali[static_cast<size_t>(t)]]);
        total += p;
    }
    return total > 0.0 ? std::log(total) : -std::numeric_limits<double>::infinity();
}

// Plain exhaustive recursion on suffixes; unit costs.
inline int edit_distance_oracle(const int* ref, int m, const int* hyp, int n) {
    if (m == 0) return n;
    if (n == 0) return m;
    int best = edit_distance_oracle(ref + 1, m - 1, hyp + 1, n - 1) + (ref[0] == hyp[0] ? 0 : 1);
    int del = edit_distance_oracle(ref + 1, m - 1, hyp, n) + 1;
    if (del < best) best = del;
    int ins = edit_distance_oracle(ref, m, hyp + 1, n - 1) + 1;
    if (ins < best) best = ins;
    return best;
}

// Random log-softmax-normalized rows, built directly (not via the
// library op).
template <typename T>
maskctc::TensorT<T> random_log_probs(int rows, int cols, maskctc::Rng& rng, double scale = 1.5) {
    std::vector<T> data(static_cast<size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
        double mx = -1e30;
        std::vector<double> logits(static_cast<size_t>(cols));
        for (int c = 0; c < cols; ++c) {
            logits[static_cast<size_t>(c)] = rng.normal(0.0, scale);
            mx = std::max(mx, logits[static_cast<size_t>(c)]);
        }
        double z = 0.0;
        for (int c = 0; c < cols; ++c) z += std::exp(logits[static_cast<size_t>(c)] - mx);
        double lse = mx + std::log(z);
        for (int c = 0; c < cols; ++c)
            data[static_cast<size_t>(r) * cols + c] = static_cast<T>(logits[static_cast<size_t>(c)] - lse);
    }
    return maskctc::TensorT<T>::constant({rows, cols}, std::move(data));
}

}  // namespace testutil
