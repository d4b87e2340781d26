#include <cmath>

#include "doctest.h"
#include "sinkcache/evalsuite.hpp"
#include "test_helpers.hpp"

using namespace sinkcache;

TEST_CASE("stream perplexity definition on a two-token stream") {
    auto cfg = testutil::tiny_config();
    const Weights w = init_weights(cfg);
    const std::vector<int> stream = {3, 7};
    const auto report = stream_perplexity(w, cfg, CachePolicy::dense(), stream, 1);
    REQUIRE(report.tokens_scored == 1);
    CHECK(report.positions[0] == 1);
    // The scored NLL is the model's loss on token 2 after seeing token 1.
    DecoderSession session(&w, cfg, CachePolicy::dense());
    const auto logits = session.step(3);
    CHECK(report.nll[0] == doctest::Approx(cross_entropy<float>(logits, 7)).epsilon(1e-7));
    CHECK(report.perplexity == doctest::Approx(std::exp(static_cast<double>(report.nll[0]))));
    CHECK(report.perplexity >= 1.0);
}

TEST_CASE("perplexity recomputed from the emitted NLL list matches exactly") {
    auto cfg = testutil::tiny_config();
    const Weights w = init_weights(cfg);
    const auto stream = testutil::seeded_tokens(40, cfg.vocab_size, 17);
    const auto report = stream_perplexity(w, cfg, CachePolicy::sink_streaming(2, 6), stream, 4);
    CHECK(report.perplexity == doctest::Approx(perplexity_from_nll(report.nll)).epsilon(1e-9));
    CHECK(static_cast<int64_t>(report.nll.size()) == report.tokens_scored);
    CHECK(report.tokens_scored == 40 - 4);
}

TEST_CASE("stream shorter than capacity: sink streaming equals dense") {
    auto cfg = testutil::tiny_config();
    const Weights w = init_weights(cfg);
    const auto stream = testutil::seeded_tokens(24, cfg.vocab_size, 23);
    const auto a = stream_perplexity(w, cfg, CachePolicy::sink_streaming(4, 24), stream, 2);
    const auto b = stream_perplexity(w, cfg, CachePolicy::dense(), stream, 2);
    REQUIRE(a.nll.size() == b.nll.size());
    for (size_t i = 0; i < a.nll.size(); ++i) CHECK(std::abs(a.nll[i] - b.nll[i]) < 1e-5);
    CHECK(a.perplexity == doctest::Approx(b.perplexity).epsilon(1e-5));
}

TEST_CASE("recompute with a window covering the whole stream equals dense") {
    auto cfg = testutil::tiny_config();
    const Weights w = init_weights(cfg);
    const auto stream = testutil::seeded_tokens(20, cfg.vocab_size, 29);
    const auto a = stream_perplexity(w, cfg, CachePolicy::sliding_recompute(64), stream, 1);
    const auto b = stream_perplexity(w, cfg, CachePolicy::dense(), stream, 1);
    REQUIRE(a.nll.size() == b.nll.size());
    for (size_t i = 0; i < a.nll.size(); ++i) CHECK(std::abs(a.nll[i] - b.nll[i]) < 1e-5);
}

TEST_CASE("stream perplexity rejects empty and oversplit streams") {
    auto cfg = testutil::tiny_config();
    const Weights w = init_weights(cfg);
    CHECK_THROWS_AS(stream_perplexity(w, cfg, CachePolicy::dense(), std::vector<int>{}, 0),
                    EmptyInputError);
    const std::vector<int> s = {1, 2, 3};
    CHECK_THROWS_AS(stream_perplexity(w, cfg, CachePolicy::dense(), s, 3), EmptyInputError);
}

TEST_CASE("report CSV carries position,nll rows that parse back") {
    auto cfg = testutil::tiny_config();
    const Weights w = init_weights(cfg);
    const auto stream = testutil::seeded_tokens(12, cfg.vocab_size, 31);
    const auto report = stream_perplexity(w, cfg, CachePolicy::dense(), stream, 2);
    const std::string csv = report_to_csv(report);
    CHECK(csv.rfind("position,nll\n", 0) == 0);
    size_t rows = 0;
    for (char ch : csv)
        if (ch == '\n') ++rows;
    CHECK(rows == report.nll.size() + 1);
}

TEST_CASE("sink ablation x=0 row equals a pure window run") {
    auto cfg = testutil::tiny_config();
    const Weights w = init_weights(cfg);
    const auto stream = testutil::seeded_tokens(30, cfg.vocab_size, 37);
    const std::vector<int> xs = {0, 2};
    const auto sweep = sink_ablation(w, cfg, xs, 8, stream, 2);
    REQUIRE(sweep.rows.size() == 2);
    const auto window_run = stream_perplexity(w, cfg, CachePolicy::window(8), stream, 2);
    CHECK(sweep.rows[0].perplexity == doctest::Approx(window_run.perplexity));
    CHECK_THROWS_AS(sink_ablation(w, cfg, std::vector<int>{8}, 8, stream, 2), ConfigError);
}

TEST_CASE("cache sweep is deterministic and flags non-monotone rows") {
    auto cfg = testutil::tiny_config();
    const Weights w = init_weights(cfg);
    const auto stream = testutil::seeded_tokens(36, cfg.vocab_size, 41);
    const std::vector<int> ys = {6, 12};
    const auto a = cache_size_sweep(w, cfg, 2, ys, stream, 2);
    const auto b = cache_size_sweep(w, cfg, 2, ys, stream, 2);
    CHECK(sweep_to_csv(a) == sweep_to_csv(b));

    SUBCASE("doubled capacity with no eviction in either is identical") {
        const auto short_stream = testutil::seeded_tokens(8, cfg.vocab_size, 43);
        const std::vector<int> wide = {16, 32};
        const auto sweep = cache_size_sweep(w, cfg, 2, wide, short_stream, 1);
        CHECK(sweep.rows[0].perplexity == doctest::Approx(sweep.rows[1].perplexity).epsilon(1e-9));
    }

    SUBCASE("flag computation") {
        CHECK_FALSE(flag_non_monotone({{4, 8, 3.0}, {4, 16, 2.0}, {4, 32, 2.0}}));
        CHECK(flag_non_monotone({{4, 8, 3.0}, {4, 16, 3.5}}));
    }
}

TEST_CASE("streameval generator") {
    SUBCASE("defaults follow the q=10, d=20 protocol") {
        const auto sample = gen_streameval(100);
        CHECK(sample.lines_per_query == 10);
        CHECK(sample.answer_distance == 20);
        CHECK(sample.queries.size() == 100);
        // First query fires at line 30 (first multiple of 10 with key-20 >= 1).
        CHECK(sample.queries[0].line_key == 10);
        // A query at line 40 asks for line 20's value.
        CHECK(sample.queries[1].line_key == 20);
        char expect[8];
        std::snprintf(expect, sizeof(expect), "%04d", sample.values[20 - 1]);
        CHECK(sample.queries[1].truth == expect);
    }
    SUBCASE("deterministic per seed") {
        const auto a = gen_streameval(20, 3, 2, 5);
        const auto b = gen_streameval(20, 3, 2, 5);
        const auto c = gen_streameval(20, 3, 2, 6);
        CHECK(a.tokens == b.tokens);
        CHECK(a.tokens != c.tokens);
    }
    SUBCASE("values are unique within a sample") {
        const auto sample = gen_streameval(50, 2, 1, 9);
        auto sorted = sample.values;
        std::sort(sorted.begin(), sorted.end());
        CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());
    }
    SUBCASE("every line tokenizes to the same fixed length") {
        const auto sample = gen_streameval(10, 4, 3, 2);
        for (const auto& line : sample.lines)
            CHECK(static_cast<int>(tokenize_bytes(line).size()) == sample.line_token_len);
        // The full stream is a whole number of fixed-size lines (queries
        // plus their answers share the same geometry).
        CHECK(sample.tokens.size() % sample.line_token_len == 0);
    }
    SUBCASE("truth text sits at the recorded generation offset") {
        const auto sample = gen_streameval(10, 2, 1, 3);
        const std::string text = detokenize_bytes(sample.tokens);
        for (const auto& q : sample.queries)
            CHECK(text.substr(q.gen_offset, 4) == q.truth);
    }
}

namespace {

// Oracle "model": already knows the whole stream and always predicts the
// true next token with a one-hot distribution. `fed` counts consumed tokens,
// so after feeding the k-th token the logits point at tokens[k].
struct EchoOracle {
    const std::vector<int>* tokens;
    int64_t fed = 0;
    std::vector<float> step(int) {
        ++fed;
        std::vector<float> logits(256, 0.0f);
        const int next = fed < static_cast<int64_t>(tokens->size()) ? (*tokens)[fed] : 0;
        logits[next] = 10.0f;
        return logits;
    }
};

struct ConstantWrong {
    std::vector<float> step(int) {
        std::vector<float> logits(256, 0.0f);
        logits['7'] = 10.0f;
        return logits;
    }
};

}  // namespace

TEST_CASE("streameval scorer on oracles") {
    const auto sample = gen_streameval(25, 2, 1, 77);
    SUBCASE("ground-truth echo scores 1.0") {
        EchoOracle oracle{&sample.tokens, 0};
        CHECK(score_streameval_with(oracle, sample) == doctest::Approx(1.0));
    }
    SUBCASE("a constant wrong token scores 0.0") {
        CHECK(score_streameval_with(ConstantWrong{}, sample) == doctest::Approx(0.0));
    }
}

TEST_CASE("sink fraction on untrained models") {
    SUBCASE("rope at initialization is close to uniform 1/len") {
        auto cfg = testutil::tiny_config();
        cfg.n_heads = 4;
        cfg.d_model = 16;
        cfg.d_head = 4;
        cfg.vocab_size = kMarkovAlphabet;
        const Weights w = init_weights(cfg);
        const auto corpus = make_corpus(CorpusKind::kMarkov, 20000, 13);
        const int len = 16;
        const auto profile = sink_fraction(w, cfg, corpus, len, 256, 3);
        REQUIRE(profile.layers.size() == 2);
        for (const auto& layer : profile.layers) {
            CHECK(layer.frac_first >= 0.0);
            CHECK(layer.frac_first <= 1.0);
            const double tol = std::max(3.0 * layer.sem_first, 1e-3);
            CHECK(std::abs(layer.frac_first - 1.0 / len) < tol + 0.004);
            CHECK(layer.total_mass == doctest::Approx(1.0).epsilon(1e-4));
        }
    }

    SUBCASE("alibi with a constant-token sentence matches the closed form at layer 0") {
        auto cfg = testutil::tiny_config(PosKind::kAlibi);
        const Weights w = init_weights(cfg);
        const int len = 12;
        TokenStream constant{cfg.vocab_size, std::vector<int>(4096, 5)};
        const auto profile = sink_fraction(w, cfg, constant, len, 8, 3);
        // All keys equal => scores reduce to the alibi bias alone, so the
        // layer-0 attention is softmax(-slope * distance) exactly.
        double expect = 0.0;
        for (int h = 0; h < cfg.n_heads; ++h) {
            const double slope = alibi_slope(h, cfg.n_heads);
            double denom = 0.0;
            for (int j = 0; j < len; ++j) denom += std::exp(-slope * (len - 1 - j));
            expect += std::exp(-slope * (len - 1)) / denom;
        }
        expect /= cfg.n_heads;
        CHECK(profile.layers[0].frac_first == doctest::Approx(expect).epsilon(1e-4));
    }

    SUBCASE("softmax1 total mass stays at or below one") {
        auto cfg = testutil::tiny_config(PosKind::kRope, AttnVariant::kSoftmax1);
        cfg.vocab_size = kMarkovAlphabet;
        const Weights w = init_weights(cfg);
        const auto corpus = make_corpus(CorpusKind::kMarkov, 8000, 13);
        const auto profile = sink_fraction(w, cfg, corpus, 12, 64, 3);
        for (const auto& layer : profile.layers) CHECK(layer.total_mass <= 1.0 + 1e-4);
    }
}

TEST_CASE("bench rows carry the exact footprint formula") {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.d_model = 8;
    cfg.d_head = 4;
    cfg.vocab_size = 32;
    cfg.train_window = 16;
    cfg.seed = 2;
    const Weights w = init_weights(cfg);
    const std::vector<int> sizes = {8, 16};
    const auto rows = bench_decode(w, cfg, CachePolicy::Kind::kSinkStreaming, 4, sizes, 160, 1);
    REQUIRE(rows.size() == 2);
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].latency_us_median > 0.0);
        CHECK(rows[i].mem_bytes == kv_entry_bytes(sizes[i], cfg.n_layers, cfg.n_heads, cfg.d_head));
    }
    CHECK(rows[1].mem_bytes == 2 * rows[0].mem_bytes);  // exactly proportional

    const auto rec = bench_decode(w, cfg, CachePolicy::Kind::kSlidingRecompute, 0, sizes, 160, 1);
    CHECK(rec[0].mem_bytes == rows[0].mem_bytes);
    CHECK_THROWS_AS(bench_decode(w, cfg, CachePolicy::Kind::kSinkStreaming, 4, sizes, 100, 1),
                    ConfigError);
}
