#include "maskctc/metrics.hpp"

#include <cstdint>

namespace maskctc {

EditCounts edit_distance(const std::vector<int>& ref, const std::vector<int>& hyp) {
    const int m = static_cast<int>(ref.size());
    const int n = static_cast<int>(hyp.size());
    std::vector<int> dp(static_cast<size_t>(m + 1) * (n + 1));
    auto at = [&](int i, int j) -> int& { return dp[static_cast<size_t>(i) * (n + 1) + j]; };
    for (int i = 0; i <= m; ++i) at(i, 0) = i;
    for (int j = 0; j <= n; ++j) at(0, j) = j;
    for (int i = 1; i <= m; ++i) {
        for (int j = 1; j <= n; ++j) {
            if (ref[static_cast<size_t>(i - 1)] == hyp[static_cast<size_t>(j - 1)]) {
                at(i, j) = at(i - 1, j - 1);
            } else {
                int best = at(i - 1, j - 1);        // substitution
                if (at(i - 1, j) < best) best = at(i - 1, j);  // deletion
                if (at(i, j - 1) < best) best = at(i, j - 1);  // insertion
                at(i, j) = best + 1;
            }
        }
    }
    EditCounts c;
    c.dist = at(m, n);
    int i = m, j = n;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0 && ref[static_cast<size_t>(i - 1)] == hyp[static_cast<size_t>(j - 1)] &&
            at(i, j) == at(i - 1, j - 1)) {
            --i;
            --j;
        } else if (i > 0 && j > 0 && at(i, j) == at(i - 1, j - 1) + 1) {
            ++c.subs;
            --i;
            --j;
        } else if (i > 0 && at(i, j) == at(i - 1, j) + 1) {
            ++c.dels;
            --i;
        } else {
            ++c.ins;
            --j;
        }
    }
    return c;
}

void ErrorStats::add(const std::vector<int>& ref, const std::vector<int>& hyp) {
    EditCounts c = edit_distance(ref, hyp);
    ref_tokens += static_cast<int64_t>(ref.size());
    dist += c.dist;
    subs += c.subs;
    ins += c.ins;
    dels += c.dels;
    sentences += 1;
    sentence_errors += (c.dist > 0) ? 1 : 0;
}

}  // namespace maskctc
