#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "maskctc/training.hpp"
#include "testutil.hpp"

using namespace maskctc;

TEST_CASE("att_loss certainty, uniform and random oracle") {
    // one-hot-perfect logits -> ~0; rows hit target 0 then target 1
    const double tiny = -60.0;
    std::vector<double> perfect = {0.0, tiny, tiny, tiny, tiny, 0.0, tiny, tiny};
    auto lp = DTensor::constant({2, 4}, perfect);
    CHECK(att_loss(lp, {0, 1}).item() == doctest::Approx(0.0).epsilon(1e-10));

    // uniform logits over 10 classes -> ln 10 per position
    auto uni = DTensor::constant({3, 10}, std::vector<double>(30, std::log(0.1)));
    CHECK(att_loss(uni, {4, 7, 0}).item() == doctest::Approx(std::log(10.0)));

    // random case equals the hand summation
    Rng rng(3);
    auto r = testutil::random_log_probs<double>(5, 6, rng);
    std::vector<int> targets;
    for (int i = 0; i < 5; ++i) targets.push_back(rng.uniform_int(0, 5));
    double hand = 0.0;
    for (int i = 0; i < 5; ++i) hand -= r.values()[static_cast<size_t>(i) * 6 + targets[static_cast<size_t>(i)]];
    hand /= 5.0;
    CHECK(att_loss(r, targets).item() == doctest::Approx(hand).epsilon(1e-12));

    CHECK_THROWS_AS(att_loss(r, {0, 1}), ContractError);
}

TEST_CASE("cmlm_loss only sees masked positions") {
    Rng rng(5);
    auto r = testutil::random_log_probs<double>(6, 8, rng);
    std::vector<int> targets;
    for (int i = 0; i < 6; ++i) targets.push_back(rng.uniform_int(0, 7));
    std::vector<int> masked = {1, 4};

    double hand = 0.0;
    for (int pos : masked) hand -= r.values()[static_cast<size_t>(pos) * 8 + targets[static_cast<size_t>(pos)]];
    hand /= 2.0;
    CHECK(cmlm_loss(r, targets, masked).item() == doctest::Approx(hand).epsilon(1e-12));

    // uniform logits: ln 8 for any mask set
    auto uni = DTensor::constant({4, 8}, std::vector<double>(32, std::log(1.0 / 8.0)));
    CHECK(cmlm_loss(uni, {0, 1, 2, 3}, {0, 3}).item() == doctest::Approx(std::log(8.0)));

    // perturbing an unmasked row leaves the loss unchanged
    auto vals = r.values();
    for (int c = 0; c < 8; ++c) vals[static_cast<size_t>(0) * 8 + c] += 0.5;  // row 0 is unmasked
    auto r2 = DTensor::constant({6, 8}, vals);
    CHECK(cmlm_loss(r2, targets, masked).item() == doctest::Approx(cmlm_loss(r, targets, masked).item()));

    CHECK_THROWS_AS(cmlm_loss(r, targets, {}), ContractError);
}

TEST_CASE("att and cmlm losses differentiate") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        auto x0 = testutil::random_vec(4 * 5, rng);
        std::vector<int> targets;
        for (int i = 0; i < 4; ++i) targets.push_back(rng.uniform_int(0, 4));
        {
            auto x = DTensor::param({4, 5}, x0);
            auto loss = att_loss(log_softmax(x), targets);
            backward(loss);
            auto fd = testutil::fd_grad(x0, [&](const std::vector<double>& v) {
                return att_loss(log_softmax(DTensor::param({4, 5}, v)), targets).item();
            });
            CHECK(testutil::max_rel_err(x.grad(), fd) < 1e-3);
        }
        {
            std::vector<int> masked = {0, 2};
            auto x = DTensor::param({4, 5}, x0);
            auto loss = cmlm_loss(log_softmax(x), targets, masked);
            backward(loss);
            auto fd = testutil::fd_grad(x0, [&](const std::vector<double>& v) {
                return cmlm_loss(log_softmax(DTensor::param({4, 5}, v)), targets, masked).item();
            });
            CHECK(testutil::max_rel_err(x.grad(), fd) < 1e-3);
        }
    }
}

TEST_CASE("sample_mask_count distribution and determinism") {
    Rng rng(11);
    CHECK(sample_mask_count(0, rng) == 0);
    for (int i = 0; i < 50; ++i) CHECK(sample_mask_count(1, rng) == 1);

    std::map<int, int> counts;
    Rng r2(13);
    const int draws = 40000;
    for (int i = 0; i < draws; ++i) counts[sample_mask_count(4, r2)]++;
    for (int v = 1; v <= 4; ++v) {
        double freq = static_cast<double>(counts[v]) / draws;
        CHECK(freq == doctest::Approx(0.25).epsilon(0.08));  // +-2% absolute
        CHECK(std::fabs(freq - 0.25) < 0.02);
    }

    Rng a(17), b(17);
    for (int i = 0; i < 100; ++i) CHECK(sample_mask_count(9, a) == sample_mask_count(9, b));
}

TEST_CASE("apply_training_masks boundaries and uniformity") {
    Rng rng(19);
    std::vector<int> y = {5, 6, 7, 8, 9};

    auto all = apply_training_masks(y, 5, rng);
    CHECK(all.masked_positions == std::vector<int>{0, 1, 2, 3, 4});
    for (int t : all.tokens) CHECK(t == Vocab::kMask);

    std::vector<int> one = {7};
    auto single = apply_training_masks(one, 1, rng);
    CHECK(single.tokens == std::vector<int>{Vocab::kMask});

    CHECK_THROWS_AS(apply_training_masks(y, 6, rng), ContractError);
    CHECK_THROWS_AS(apply_training_masks(y, 0, rng), ContractError);

    // every unordered pair of positions shows up ~1/10 of the time
    std::map<std::pair<int, int>, int> pair_counts;
    const int trials = 50000;
    Rng r2(23);
    for (int i = 0; i < trials; ++i) {
        auto ms = apply_training_masks(y, 2, r2);
        pair_counts[{ms.masked_positions[0], ms.masked_positions[1]}]++;
    }
    CHECK(pair_counts.size() == 10);
    for (const auto& [pair, count] : pair_counts) {
        double freq = static_cast<double>(count) / trials;
        CHECK(std::fabs(freq - 0.1) < 0.015);
    }
}

TEST_CASE("joint losses are the stated affine combinations") {
    auto ctc = Tensor::scalar(-10.0f);
    auto att = Tensor::scalar(2.0f);
    CHECK(joint_ar_loss(ctc, att, 0.0).item() == doctest::Approx(2.0));
    CHECK(joint_ar_loss(ctc, att, 1.0).item() == doctest::Approx(10.0));
    CHECK(joint_ar_loss(ctc, att, 0.3).item() == doctest::Approx(4.4));

    auto ctc2 = Tensor::scalar(-20.0f);
    auto cmlm = Tensor::scalar(3.0f);
    CHECK(joint_nar_loss(ctc2, cmlm, 0.0).item() == doctest::Approx(3.0));
    CHECK(joint_nar_loss(ctc2, cmlm, 1.0).item() == doctest::Approx(20.0));
    CHECK(joint_nar_loss(ctc2, cmlm, 0.3).item() == doctest::Approx(8.1));

    CHECK_THROWS_AS(joint_ar_loss(ctc, att, 1.5), ConfigError);
    CHECK_THROWS_AS(joint_nar_loss(ctc, att, -0.1), ConfigError);

    // linear in the weight for fixed component losses
    Rng rng(29);
    for (int trial = 0; trial < 20; ++trial) {
        double a = rng.uniform(), b = rng.uniform();
        double l0 = joint_ar_loss(ctc, att, 0.0).item();
        double l1 = joint_ar_loss(ctc, att, 1.0).item();
        double la = joint_ar_loss(ctc, att, a).item();
        double lb = joint_ar_loss(ctc, att, b).item();
        CHECK(la == doctest::Approx(l0 + a * (l1 - l0)).epsilon(1e-5));
        CHECK(lb == doctest::Approx(l0 + b * (l1 - l0)).epsilon(1e-5));
    }
}

TEST_CASE("lr schedule shape") {
    LrSchedule sched{2e-3, 100};
    CHECK(sched.lr(100) == doctest::Approx(2e-3));
    // warmup region proportional to s
    CHECK(sched.lr(50) == doctest::Approx(0.5 * 2e-3));
    // decay region proportional to 1/sqrt(s)
    CHECK(sched.lr(400) == doctest::Approx(2e-3 * std::sqrt(100.0 / 400.0)));
    // matches min(s^-0.5, s * warmup^-1.5) up to the peak constant
    for (int64_t s : {1, 10, 100, 1000, 10000}) {
        double expect = 2e-3 * std::sqrt(100.0) *
                        std::min(1.0 / std::sqrt(static_cast<double>(s)), static_cast<double>(s) * std::pow(100.0, -1.5));
        CHECK(sched.lr(s) == doctest::Approx(expect));
    }
}

TEST_CASE("optimizer_step zero grads, first step and NaN abort") {
    ParamMap<float> params;
    params.emplace("w", Tensor::param({2}, {1.0f, -2.0f}));
    TrainState state;
    LrSchedule sched{1e-2, 10};

    // zero gradients leave parameters unchanged
    params.at("w").grad();
    optimizer_step(params, state, sched);
    CHECK(params.at("w").values() == std::vector<float>{1.0f, -2.0f});

    // constant gradient 1: first-step update magnitude equals lr(step)
    ParamMap<float> p2;
    p2.emplace("w", Tensor::param({1}, {0.0f}));
    TrainState s2;
    p2.at("w").grad()[0] = 1.0f;
    optimizer_step(p2, s2, sched);
    CHECK(p2.at("w").values()[0] == doctest::Approx(-sched.lr(1)).epsilon(1e-5));
    CHECK(p2.at("w").grad()[0] == 0.0f);  // zeroed afterwards

    ParamMap<float> p3;
    p3.emplace("bad.param", Tensor::param({1}, {0.0f}));
    TrainState s3;
    p3.at("bad.param").grad()[0] = std::nanf("");
    CHECK_THROWS_WITH_AS(optimizer_step(p3, s3, sched), doctest::Contains("bad.param"), NumericError);
}

TEST_CASE("one repeated step decreases the loss on a tiny model") {
    auto vocab = Vocab::make_synthetic(4);
    ModelConfig cfg;
    cfg.enc_layers = 1;
    cfg.dec_layers = 1;
    cfg.heads = 2;
    cfg.d_model = 8;
    cfg.d_ff = 16;
    cfg.downsample_factor = 2;
    cfg.dropout_rate = 0.0f;

    TrainConfig tc;
    tc.model_type = ModelType::maskctc;
    tc.epochs = 1;

    Rng data_rng(31);
    int ok_trials = 0;
    for (int trial = 0; trial < 10; ++trial) {
        auto model = Model::init(cfg, vocab, 3, ModelType::maskctc, 100 + static_cast<uint64_t>(trial));
        FeatureSeq feats;
        feats.frames = 8;
        feats.dim = 3;
        feats.data.resize(24);
        for (auto& v : feats.data) v = static_cast<float>(data_rng.normal());
        std::vector<int> y = {Vocab::kContentStart, Vocab::kContentStart + 1};

        TrainState state;
        LrSchedule sched{1e-2, 100};  // lr(1) = 1e-4, a small first step
        Rng mask_rng(7);
        auto bound = model.bind<float>(true, &mask_rng);
        Rng mask_rng1(7);
        auto loss1 = utterance_loss(bound, feats, y, tc, mask_rng1);
        double before = loss1.item();
        backward(loss1);
        model.harvest_grads(bound);
        optimizer_step(model.params, state, sched);

        Rng mask_rng2(7);
        auto bound2 = model.bind<float>(true, &mask_rng2);
        Rng mask_rng3(7);
        double after = utterance_loss(bound2, feats, y, tc, mask_rng3).item();
        if (after < before) ++ok_trials;
    }
    CHECK(ok_trials == 10);
}
