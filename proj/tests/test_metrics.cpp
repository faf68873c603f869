#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "maskctc/metrics.hpp"
#include "testutil.hpp"

using namespace maskctc;

TEST_CASE("edit_distance identity, deletion and mixed cases") {
    // ref == hyp
    auto c = edit_distance({1, 2, 3}, {1, 2, 3});
    CHECK(c.dist == 0);
    CHECK(c.subs == 0);
    CHECK(c.ins == 0);
    CHECK(c.dels == 0);

    // single trailing deletion
    c = edit_distance({1, 2, 3}, {1, 2});
    CHECK(c.dist == 1);
    CHECK(c.subs == 0);
    CHECK(c.ins == 0);
    CHECK(c.dels == 1);

    // one substitution plus one insertion
    c = edit_distance({1, 2, 3, 4}, {1, 9, 3, 4, 5});
    CHECK(c.dist == 2);
    CHECK(c.subs == 1);
    CHECK(c.ins == 1);
    CHECK(c.dels == 0);
    // sanity against the independent oracle
    std::vector<int> ref = {1, 2, 3, 4}, hyp = {1, 9, 3, 4, 5};
    CHECK(c.dist == testutil::edit_distance_oracle(ref.data(), 4, hyp.data(), 5));
}

TEST_CASE("edit_distance empty sequences") {
    auto c = edit_distance({}, {});
    CHECK(c.dist == 0);
    c = edit_distance({}, {1, 2});
    CHECK(c.dist == 2);
    CHECK(c.ins == 2);
    c = edit_distance({1, 2}, {});
    CHECK(c.dist == 2);
    CHECK(c.dels == 2);
}

TEST_CASE("decomposition always sums to the distance") {
    Rng rng(7);
    for (int trial = 0; trial < 500; ++trial) {
        int m = rng.uniform_int(0, 8), n = rng.uniform_int(0, 8);
        std::vector<int> ref, hyp;
        for (int i = 0; i < m; ++i) ref.push_back(rng.uniform_int(0, 3));
        for (int i = 0; i < n; ++i) hyp.push_back(rng.uniform_int(0, 3));
        auto c = edit_distance(ref, hyp);
        CHECK(c.subs + c.ins + c.dels == c.dist);
        CHECK(c.dist == testutil::edit_distance_oracle(ref.data(), m, hyp.data(), n));
    }
}

TEST_CASE("matches the exhaustive recursive oracle on short 3-symbol pairs") {
    // full enumeration for lengths <= 4 here; the acceptance suite runs
    // the complete <= 6 sweep
    std::vector<std::vector<int>> seqs;
    for (int len = 0; len <= 4; ++len) {
        int count = 1;
        for (int i = 0; i < len; ++i) count *= 3;
        for (int code = 0; code < count; ++code) {
            std::vector<int> s;
            int c = code;
            for (int i = 0; i < len; ++i) {
                s.push_back(c % 3);
                c /= 3;
            }
            seqs.push_back(std::move(s));
        }
    }
    for (const auto& ref : seqs) {
        for (const auto& hyp : seqs) {
            auto c = edit_distance(ref, hyp);
            int oracle = testutil::edit_distance_oracle(ref.data(), static_cast<int>(ref.size()), hyp.data(),
                                                        static_cast<int>(hyp.size()));
            CHECK(c.dist == oracle);
            CHECK(c.subs + c.ins + c.dels == c.dist);
        }
    }
}

TEST_CASE("error stats aggregate rates") {
    ErrorStats stats;
    stats.add({1, 2, 3}, {1, 2, 3});
    stats.add({1, 2, 3}, {1, 2});
    CHECK(stats.ref_tokens == 6);
    CHECK(stats.dist == 1);
    CHECK(stats.token_error_rate() == doctest::Approx(1.0 / 6.0));
    CHECK(stats.sentence_error_rate() == doctest::Approx(0.5));
    CHECK(stats.dist == stats.subs + stats.ins + stats.dels);
}
