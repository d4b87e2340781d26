#include <cmath>

#include "doctest.h"
#include "sinkcache/checkpoint.hpp"
#include "sinkcache/train.hpp"
#include "test_helpers.hpp"

using namespace sinkcache;

namespace {

ModelConfig small_train_config(AttnVariant variant = AttnVariant::kSoftmax, int sinks = 0) {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_model = 16;
    cfg.d_head = 8;
    cfg.vocab_size = kMarkovAlphabet + sinks;
    cfg.train_window = 16;
    cfg.attn_variant = variant;
    cfg.n_sink_tokens = sinks;
    cfg.seed = 11;
    return cfg;
}

TrainConfig quick_train(int steps, uint64_t seed = 11) {
    TrainConfig t;
    t.steps = steps;
    t.batch = 4;
    t.seq_len = 16;
    t.warmup_steps = 10;
    t.seed = seed;
    return t;
}

}  // namespace

TEST_CASE("zero-step training returns the initialization, no curve") {
    const auto cfg = small_train_config();
    const auto corpus = make_corpus(CorpusKind::kMarkov, 4000, 5);
    const auto result = train(cfg, quick_train(0), corpus);
    CHECK(result.curve.empty());
    const Weights init = init_weights(cfg);
    auto got = tensor_list(const_cast<Weights&>(result.weights));
    auto want = tensor_list(const_cast<Weights&>(init));
    for (size_t t = 0; t < got.size(); ++t)
        for (size_t i = 0; i < got[t].data.size(); ++i) CHECK(got[t].data[i] == want[t].data[i]);
}

TEST_CASE("training is bitwise reproducible for a fixed seed") {
    const auto cfg = small_train_config();
    const auto corpus = make_corpus(CorpusKind::kMarkov, 4000, 5);
    const auto a = train(cfg, quick_train(12), corpus);
    const auto b = train(cfg, quick_train(12), corpus);
    auto ta = tensor_list(const_cast<Weights&>(a.weights));
    auto tb = tensor_list(const_cast<Weights&>(b.weights));
    for (size_t t = 0; t < ta.size(); ++t)
        for (size_t i = 0; i < ta[t].data.size(); ++i) CHECK(ta[t].data[i] == tb[t].data[i]);
    CHECK(a.curve == b.curve);
    const auto c = train(cfg, quick_train(12, 999), corpus);
    CHECK(a.weights.output_head.data != c.weights.output_head.data);
}

TEST_CASE("short training run reduces the loss and records every step") {
    const auto cfg = small_train_config();
    const auto corpus = make_corpus(CorpusKind::kMarkov, 20000, 5);
    const auto result = train(cfg, quick_train(60), corpus);
    REQUIRE(result.curve.size() == 60);
    for (int i = 0; i < 60; ++i) {
        CHECK(result.curve[i].first == i);
        CHECK(std::isfinite(result.curve[i].second));
    }
    // Average the first and last few steps to smooth batch noise.
    double early = 0, late = 0;
    for (int i = 0; i < 5; ++i) early += result.curve[i].second;
    for (int i = 55; i < 60; ++i) late += result.curve[i].second;
    CHECK(late < early);
}

TEST_CASE("training diverges loudly at an absurd learning rate") {
    const auto cfg = small_train_config();
    const auto corpus = make_corpus(CorpusKind::kMarkov, 4000, 5);
    auto tcfg = quick_train(200);
    tcfg.peak_lr = 1e9f;
    tcfg.warmup_steps = 0;
    tcfg.clip_norm = 0.0f;  // disabled
    try {
        train(cfg, tcfg, corpus);
        FAIL("expected TrainingDiverged");
    } catch (const TrainingDiverged& e) {
        CHECK(e.step >= 0);
        CHECK(e.step < 200);
    }
}

TEST_CASE("sink-token training wires the sink embedding into the loss") {
    const auto cfg = small_train_config(AttnVariant::kSoftmax, 1);
    const auto corpus = make_corpus(CorpusKind::kMarkov, 4000, 5);

    SUBCASE("the sink embedding receives gradient") {
        const Weights w = init_weights(cfg);
        const auto window = testutil::seeded_tokens(12, cfg.data_vocab(), 3);
        const auto full = prepend_sink_tokens(window, cfg);
        const auto sample = make_lm_sample(full, cfg);
        LmObjective<float> obj;
        obj.forward(w, cfg, sample.inputs, sample.targets, sample.scored);
        Weights grads = make_zero_weights<float>(cfg);
        obj.backward(w, cfg, grads);
        double sum = 0;
        for (float v : grads.sink_embedding.data) sum += std::abs(v);
        CHECK(sum > 0.0);
    }

    SUBCASE("training moves the sink embedding") {
        const auto result = train(cfg, quick_train(10), corpus);
        const Weights init = init_weights(cfg);
        double moved = 0;
        for (size_t i = 0; i < init.sink_embedding.data.size(); ++i)
            moved += std::abs(result.weights.sink_embedding.data[i] - init.sink_embedding.data[i]);
        CHECK(moved > 0.0);
    }

    SUBCASE("prepended sink ids are never scored as targets") {
        auto cfg2 = small_train_config(AttnVariant::kSoftmax, 2);
        const auto window = testutil::seeded_tokens(10, cfg2.data_vocab(), 3);
        const auto full = prepend_sink_tokens(window, cfg2);
        const auto sample = make_lm_sample(full, cfg2);
        // Targets at positions 0..k-2 are sink ids and must be masked.
        CHECK(sample.scored[0] == 0);
        for (size_t i = 1; i < sample.scored.size(); ++i) CHECK(sample.scored[i] == 1);
        for (size_t i = 0; i < sample.targets.size(); ++i)
            if (sample.scored[i]) CHECK_FALSE(cfg2.is_sink_id(sample.targets[i]));
    }
}

TEST_CASE("softmax1 training equals training with a frozen all-zero KV token") {
    // The zero-KV construction is the independent route; trajectories must
    // coincide step by step.
    const auto corpus = make_corpus(CorpusKind::kMarkov, 6000, 5);
    auto cfg1 = small_train_config(AttnVariant::kSoftmax1);
    auto cfg0 = small_train_config(AttnVariant::kSoftmaxZeroKv);
    const auto r1 = train(cfg1, quick_train(10), corpus);
    const auto r0 = train(cfg0, quick_train(10), corpus);
    REQUIRE(r1.curve.size() == 10);
    for (int i = 0; i < 10; ++i)
        CHECK(std::abs(r1.curve[i].second - r0.curve[i].second) < 1e-5);
}

TEST_CASE("grad_check reports tight agreement on a zeroed tail layer") {
    auto cfg = testutil::tiny_config();
    Weights w = init_weights(cfg);
    auto& tail = w.layers.back();
    tail.wq.fill(0);
    tail.wk.fill(0);
    tail.wv.fill(0);
    tail.wo.fill(0);
    tail.w_up.fill(0);
    tail.w_down.fill(0);
    std::vector<std::vector<int>> windows = {testutil::seeded_tokens(8, cfg.data_vocab(), 1)};
    const auto report = grad_check(w, cfg, windows, 1e-4, 0.2, 5);
    for (const auto& t : report.tensors) {
        if (t.name.rfind("layer1.", 0) != 0) continue;
        CHECK(t.max_abs_err < 1e-6);
    }
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("unigram entropy of a constant stream is zero") {
    std::vector<int> tokens(100, 3);
    CHECK(unigram_entropy(tokens, 8) == doctest::Approx(0.0));
    std::vector<int> pair = {0, 1, 0, 1};
    CHECK(unigram_entropy(pair, 2) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("lr schedule: warmup then cosine to the floor") {
    auto t = quick_train(100);
    t.warmup_steps = 10;
    t.peak_lr = 1.0f;
    t.final_lr_frac = 0.1f;
    CHECK(lr_at(t, 0) == doctest::Approx(0.1));
    CHECK(lr_at(t, 9) == doctest::Approx(1.0));
    CHECK(lr_at(t, 10) == doctest::Approx(1.0));
    CHECK(lr_at(t, 99) > 0.1f - 1e-6);
    CHECK(lr_at(t, 99) < 0.2f);
    t.decay = LrDecay::kConstant;
    CHECK(lr_at(t, 50) == doctest::Approx(1.0));
}

TEST_CASE("train rejects invalid setups") {
    const auto cfg = small_train_config();
    const auto corpus = make_corpus(CorpusKind::kMarkov, 4000, 5);
    SUBCASE("corpus too small for one batch") {
        const auto tiny = make_corpus(CorpusKind::kMarkov, 32, 5);
        CHECK_THROWS_AS(train(cfg, quick_train(1), tiny), ConfigError);
    }
    SUBCASE("seq_len above the train window") {
        auto t = quick_train(1);
        t.seq_len = cfg.train_window + 1;
        CHECK_THROWS_AS(train(cfg, t, corpus), ConfigError);
    }
    SUBCASE("corpus alphabet colliding with sink ids") {
        auto c2 = small_train_config();
        c2.n_sink_tokens = 1;  // vocab stays 64: alphabet 64 no longer fits below the sink id
        CHECK_THROWS_AS(train(c2, quick_train(1), corpus), ConfigError);
    }
}
