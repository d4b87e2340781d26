#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sinkcache/corpus.hpp"
#include "sinkcache/kvcache.hpp"
#include "sinkcache/model.hpp"

namespace sinkcache {

// ---------------------------------------------------------------------------
// Streaming language-modeling perplexity.
// ---------------------------------------------------------------------------
struct StreamReport {
    CachePolicy policy;
    std::vector<int64_t> positions;  // stream position of each scored token
    std::vector<float> nll;          // matching per-token NLL
    double perplexity = 0.0;         // exp(mean nll)
    int64_t tokens_scored = 0;
};

// Decodes the stream token by token, scoring the NLL of every token whose
// (1-based) stream position exceeds `skip`. Models trained with sink tokens
// get their sink ids fed first; those are never scored. A sliding-recompute
// policy re-encodes the planned range from scratch at every scored step; all
// other policies decode incrementally against a cache.
StreamReport stream_perplexity(const Weights& w, const ModelConfig& cfg, CachePolicy policy,
                               std::span<const int> stream, int64_t skip);

// exp(mean nll) recomputed from the emitted list; must equal .perplexity.
double perplexity_from_nll(std::span<const float> nll);

std::string report_to_csv(const StreamReport& report);  // "position,nll"

// ---------------------------------------------------------------------------
// Sweeps.
// ---------------------------------------------------------------------------
struct SweepRow {
    int x = 0;
    int y = 0;
    double perplexity = 0.0;
};

struct SweepResult {
    std::vector<SweepRow> rows;
    bool non_monotone = false;  // perplexity rose somewhere along the sweep
};

// Perplexity of sink:x+(capacity-x) for each x. x = 0 degenerates to
// window:capacity by construction.
SweepResult sink_ablation(const Weights& w, const ModelConfig& cfg, std::span<const int> xs,
                          int capacity, std::span<const int> stream, int64_t skip);

// Perplexity of sink:x+y for each y.
SweepResult cache_size_sweep(const Weights& w, const ModelConfig& cfg, int x,
                             std::span<const int> ys, std::span<const int> stream, int64_t skip);

bool flag_non_monotone(const std::vector<SweepRow>& rows);
std::string sweep_to_csv(const SweepResult& sweep);  // "x,y,ppl"

// ---------------------------------------------------------------------------
// Streaming retrieval eval: numbered register lines, a query every q lines,
// each answer exactly d lines earlier.
// ---------------------------------------------------------------------------
struct StreamEvalSample {
    int n_queries = 0;
    int lines_per_query = 10;  // q
    int answer_distance = 20;  // d
    uint64_t seed = 0;
    std::vector<std::string> lines;  // info line i (0-based) has key i+1
    std::vector<int> values;         // value of info line key i+1
    struct QueryPoint {
        int64_t gen_offset = 0;  // token index where the answer span starts
        int line_key = 0;
        std::string truth;
    };
    std::vector<QueryPoint> queries;
    std::vector<int> tokens;  // full byte stream, queries and true answers inline
    int line_token_len = kNeedleLineBytes;
};

StreamEvalSample gen_streameval(int n_queries, int lines_per_query = 10, int answer_distance = 20,
                                uint64_t seed = 0);

// Scores any incrementally decoding model: at each query point the model
// greedily emits up to `max_answer_tokens` tokens (stopping at newline); the
// trimmed text must exactly match the ground truth. The stream continues
// with the true answer regardless of what the model produced.
inline constexpr int kMaxAnswerTokens = 8;

template <typename Lm>  // Lm is copyable and exposes step(int) -> logits
double score_streameval_with(Lm lm, const StreamEvalSample& sample) {
    if (sample.queries.empty()) return 0.0;
    auto trim = [](std::string s) {
        const char* ws = " \t\r\n";
        const size_t a = s.find_first_not_of(ws);
        if (a == std::string::npos) return std::string();
        const size_t b = s.find_last_not_of(ws);
        return s.substr(a, b - a + 1);
    };
    int64_t fed = 0;
    int correct = 0;
    std::vector<float> logits;
    for (const auto& query : sample.queries) {
        while (fed < query.gen_offset) logits = lm.step(sample.tokens[fed++]);
        Lm probe = lm;  // greedy rollout must not disturb the real stream
        std::string generated;
        std::vector<float> plogits = logits;
        for (int g = 0; g < kMaxAnswerTokens; ++g) {
            int best = 0;
            for (size_t i = 1; i < plogits.size(); ++i)
                if (plogits[i] > plogits[best]) best = static_cast<int>(i);
            if (best == '\n') break;
            generated.push_back(static_cast<char>(static_cast<unsigned char>(best)));
            plogits = probe.step(best);
        }
        if (trim(generated) == query.truth) ++correct;
    }
    return static_cast<double>(correct) / sample.queries.size();
}

double score_streameval(const Weights& w, const ModelConfig& cfg, CachePolicy policy,
                        const StreamEvalSample& sample);

// ---------------------------------------------------------------------------
// Attention-mass analytics: how much post-softmax attention the final
// position puts on the stream's first token (and on the trained sink token
// when one is configured).
// ---------------------------------------------------------------------------
struct SinkFractionProfile {
    int sentence_len = 0;
    int n_sentences = 0;
    struct Layer {
        double frac_first = 0.0;      // mean mass on the first data token
        double std_first = 0.0;       // across heads
        double sem_first = 0.0;       // standard error across sentences
        double frac_sink = 0.0;       // mean mass on the sink token (k > 0)
        double std_sink = 0.0;
        double total_mass = 0.0;      // 1 for softmax, <= 1 for softmax1
    };
    std::vector<Layer> layers;
};

SinkFractionProfile sink_fraction(const Weights& w, const ModelConfig& cfg,
                                  const TokenStream& corpus, int sentence_len,
                                  int n_sentences = 256, uint64_t seed = 0);

std::string sink_fraction_to_csv(const SinkFractionProfile& profile);

// ---------------------------------------------------------------------------
// Decode latency / memory benchmark.
// ---------------------------------------------------------------------------
struct BenchRow {
    int cache_size = 0;
    double latency_us_median = 0.0;
    size_t mem_bytes = 0;
};

// For each cache size c builds the concrete policy (sink:x+(c-x),
// window:c, or recompute:c), decodes `tokens_per_point` tokens in steady
// state (cache pre-filled, prefill untimed) split into three timed segments,
// and reports the median per-token latency. tokens_per_point must be at
// least 10x the largest cache size.
std::vector<BenchRow> bench_decode(const Weights& w, const ModelConfig& cfg,
                                   CachePolicy::Kind kind, int sink_count,
                                   std::span<const int> cache_sizes, int64_t tokens_per_point,
                                   uint64_t seed = 0);

std::string bench_to_csv(const std::vector<BenchRow>& rows);

// Shortest round-trip decimal form; used everywhere floats reach a CSV.
std::string format_float(double v);
std::string format_float(float v);

}  // namespace sinkcache
