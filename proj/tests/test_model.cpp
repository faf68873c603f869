#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "maskctc/model.hpp"
#include "testutil.hpp"

using namespace maskctc;

namespace {

ModelConfig tiny_cfg() {
    ModelConfig cfg;
    cfg.enc_layers = 2;
    cfg.dec_layers = 1;
    cfg.heads = 2;
    cfg.d_model = 16;
    cfg.d_ff = 32;
    cfg.downsample_factor = 2;
    cfg.dropout_rate = 0.1f;
    return cfg;
}

FeatureSeq random_feats(int frames, int dim, Rng& rng) {
    FeatureSeq f;
    f.frames = frames;
    f.dim = dim;
    f.data.resize(static_cast<size_t>(frames) * dim);
    for (auto& v : f.data) v = static_cast<float>(rng.normal());
    return f;
}

}  // namespace

TEST_CASE("encode output length and too-short input") {
    auto vocab = Vocab::make_synthetic(6);
    auto model = Model::init(tiny_cfg(), vocab, 5, ModelType::maskctc, 1);
    Rng rng(2);

    auto bound = model.bind<float>();
    auto x8 = random_feats(8, 5, rng);
    auto enc = encode(bound, x8);
    CHECK(enc.shape() == Shape{4, 16});

    ModelConfig cfg4 = tiny_cfg();
    cfg4.downsample_factor = 4;
    auto model4 = Model::init(cfg4, vocab, 5, ModelType::maskctc, 1);
    auto bound4 = model4.bind<float>();
    auto enc4 = encode(bound4, x8);
    CHECK(enc4.shape() == Shape{2, 16});
    CHECK_THROWS_AS(encode(bound4, random_feats(3, 5, rng)), ContractError);
}

TEST_CASE("encode is deterministic in eval mode and per utterance") {
    auto vocab = Vocab::make_synthetic(6);
    auto model = Model::init(tiny_cfg(), vocab, 5, ModelType::maskctc, 7);
    Rng rng(3);
    auto u1 = random_feats(10, 5, rng);
    auto u2 = random_feats(12, 5, rng);

    auto b1 = model.bind<float>();
    auto b2 = model.bind<float>();
    // processing order does not change per-utterance outputs
    auto e1_first = encode(b1, u1).values();
    auto e2_first = encode(b1, u2).values();
    auto e2_second = encode(b2, u2).values();
    auto e1_second = encode(b2, u1).values();
    CHECK(e1_first == e1_second);
    CHECK(e2_first == e2_second);

    // training mode with the same dropout seed is deterministic
    Rng d1(9), d2(9);
    auto t1 = model.bind<float>(true, &d1);
    auto t2 = model.bind<float>(true, &d2);
    CHECK(encode(t1, u1).values() == encode(t2, u1).values());
}

TEST_CASE("ctc_head rows normalize and zero-init head is uniform") {
    auto vocab = Vocab::make_synthetic(6);
    auto model = Model::init(tiny_cfg(), vocab, 5, ModelType::maskctc, 11);
    Rng rng(4);
    auto bound = model.bind<float>();
    auto lp = ctc_head(bound, encode(bound, random_feats(9, 5, rng)));
    CHECK(lp.shape() == Shape{4, vocab.ctc_classes()});
    const int C = vocab.ctc_classes();
    for (int t = 0; t < lp.dim(0); ++t) {
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += std::exp(static_cast<double>(lp.values()[static_cast<size_t>(t) * C + c]));
        CHECK(std::fabs(std::log(s)) < 1e-5);
        // zero-init head: every class equally likely
        CHECK(lp.values()[static_cast<size_t>(t) * C] ==
              doctest::Approx(std::log(1.0 / C)).epsilon(1e-5));
    }
}

TEST_CASE("decode_step causal history dependence") {
    auto vocab = Vocab::make_synthetic(8);
    auto model = Model::init(tiny_cfg(), vocab, 5, ModelType::ar_joint, 13);
    // the zero-init output head maps every hidden state to the same
    // uniform row; give it weights so outputs actually vary with inputs
    Rng head_rng(99);
    for (auto& [name, t] : model.params)
        if (name.rfind("dec.out.", 0) == 0)
            for (auto& v : t.raw_values()) v = static_cast<float>(head_rng.normal(0.0, 0.5));
    Rng rng(5);
    auto bound = model.bind<float>();
    auto enc = encode(bound, random_feats(10, 5, rng));

    for (int len = 1; len <= 16; ++len) {
        std::vector<int> y(static_cast<size_t>(len));
        y[0] = Vocab::kSos;
        for (int i = 1; i < len; ++i) y[static_cast<size_t>(i)] = Vocab::kContentStart + rng.uniform_int(0, 7);
        auto base = decode_step(bound, y, enc, true);
        if (len < 2) continue;
        int p = rng.uniform_int(1, len - 1);
        std::vector<int> y2 = y;
        y2[static_cast<size_t>(p)] = Vocab::kContentStart + ((y[static_cast<size_t>(p)] - Vocab::kContentStart + 1) % 8);
        auto pert = decode_step(bound, y2, enc, true);
        const int C = vocab.dec_classes();
        // positions before p only saw unchanged history
        for (int l = 0; l < p; ++l)
            for (int c = 0; c < C; ++c)
                CHECK(base.values()[static_cast<size_t>(l) * C + c] ==
                      pert.values()[static_cast<size_t>(l) * C + c]);
        // position p sees its own new input token
        bool changed = false;
        for (int l = p; l < len && !changed; ++l)
            for (int c = 0; c < C; ++c)
                if (base.values()[static_cast<size_t>(l) * C + c] != pert.values()[static_cast<size_t>(l) * C + c]) {
                    changed = true;
                    break;
                }
        CHECK(changed);
    }
}

TEST_CASE("decode_step non-causal sees the whole sequence") {
    auto vocab = Vocab::make_synthetic(8);
    auto model = Model::init(tiny_cfg(), vocab, 5, ModelType::maskctc, 17);
    Rng head_rng(98);
    for (auto& [name, t] : model.params)
        if (name.rfind("dec.out.", 0) == 0)
            for (auto& v : t.raw_values()) v = static_cast<float>(head_rng.normal(0.0, 0.5));
    Rng rng(6);
    auto bound = model.bind<float>();
    auto enc = encode(bound, random_feats(10, 5, rng));

    std::vector<int> y = {Vocab::kContentStart, Vocab::kMask, Vocab::kContentStart + 2, Vocab::kContentStart + 3};
    auto base = decode_step(bound, y, enc, false);
    std::vector<int> y2 = y;
    y2[3] = Vocab::kContentStart + 4;  // change the last token, watch position 0
    auto pert = decode_step(bound, y2, enc, false);
    bool changed = false;
    const int C = vocab.dec_classes();
    for (int c = 0; c < C; ++c)
        if (base.values()[static_cast<size_t>(c)] != pert.values()[static_cast<size_t>(c)]) changed = true;
    CHECK(changed);

    // rows normalize
    for (int l = 0; l < 4; ++l) {
        double s = 0.0;
        for (int c = 0; c < C; ++c) s += std::exp(static_cast<double>(base.values()[static_cast<size_t>(l) * C + c]));
        CHECK(std::fabs(std::log(s)) < 1e-5);
    }
}

TEST_CASE("decode_step rejects <MASK> in causal mode and bad ids") {
    auto vocab = Vocab::make_synthetic(8);
    auto model = Model::init(tiny_cfg(), vocab, 5, ModelType::ar_joint, 19);
    Rng rng(7);
    auto bound = model.bind<float>();
    auto enc = encode(bound, random_feats(8, 5, rng));
    CHECK_THROWS_AS(decode_step(bound, {Vocab::kSos, Vocab::kMask}, enc, true), ContractError);
    CHECK_THROWS_AS(decode_step(bound, {vocab.size()}, enc, false), ContractError);
    CHECK_NOTHROW(decode_step(bound, {Vocab::kMask}, enc, false));
}

TEST_CASE("parameter count matches the closed form") {
    auto vocab = Vocab::make_synthetic(8);
    for (auto type : {ModelType::ctc_only, ModelType::ar_joint, ModelType::maskctc}) {
        auto model = Model::init(tiny_cfg(), vocab, 5, type, 23);
        CHECK(param_count(model.params) == expected_param_count(tiny_cfg(), vocab.size(), 5, type));
    }
    ModelConfig desk;  // defaults
    auto vocab20 = Vocab::make_synthetic(20);
    auto model = Model::init(desk, vocab20, 24, ModelType::maskctc, 29);
    CHECK(param_count(model.params) == expected_param_count(desk, vocab20.size(), 24, ModelType::maskctc));
}

TEST_CASE("ctc_only models have no decoder parameters") {
    auto vocab = Vocab::make_synthetic(8);
    auto model = Model::init(tiny_cfg(), vocab, 5, ModelType::ctc_only, 31);
    for (const auto& [name, t] : model.params) CHECK(name.rfind("dec.", 0) != 0);
    Rng rng(8);
    auto bound = model.bind<float>();
    auto enc = encode(bound, random_feats(8, 5, rng));
    CHECK_THROWS_AS(decode_step(bound, {Vocab::kSos}, enc, true), ContractError);
}

TEST_CASE("vocab layout") {
    auto vocab = Vocab::make_synthetic(20);
    CHECK(vocab.size() == 25);
    CHECK(vocab.ctc_classes() == 25);
    CHECK(vocab.dec_classes() == 24);
    CHECK(vocab.str(Vocab::kBlank) == "<blank>");
    CHECK(vocab.str(Vocab::kContentStart) == "a");
    CHECK(Vocab::token_of_dec_class(Vocab::dec_class_of(7)) == 7);
}
