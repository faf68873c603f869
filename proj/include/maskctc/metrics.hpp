#pragma once

#include <string>
#include <vector>

namespace maskctc {

struct EditCounts {
    int dist = 0;
    int subs = 0;
    int ins = 0;
    int dels = 0;
};

// Unit-cost Levenshtein distance with an S/I/D decomposition from the
// alignment backtrace. Ties in the backtrace prefer substitution, then
// deletion, then insertion. Insertions are hyp tokens absent from ref;
// deletions are ref tokens absent from hyp.
EditCounts edit_distance(const std::vector<int>& ref, const std::vector<int>& hyp);

// Running error-rate aggregation over a split.
struct ErrorStats {
    int64_t ref_tokens = 0;
    int64_t dist = 0, subs = 0, ins = 0, dels = 0;
    int64_t sentences = 0;
    int64_t sentence_errors = 0;

    void add(const std::vector<int>& ref, const std::vector<int>& hyp);
    double token_error_rate() const { return ref_tokens ? static_cast<double>(dist) / ref_tokens : 0.0; }
    double sentence_error_rate() const { return sentences ? static_cast<double>(sentence_errors) / sentences : 0.0; }
};

}  // namespace maskctc
