#include "sinkcache/evalsuite.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "sinkcache/numerics.hpp"
#include "sinkcache/rng.hpp"

namespace sinkcache {

std::string format_float(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}

std::string format_float(float v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, end);
}

double perplexity_from_nll(std::span<const float> nll) {
    if (nll.empty()) return 0.0;
    double total = 0.0;
    for (float v : nll) total += static_cast<double>(v);
    return std::exp(total / static_cast<double>(nll.size()));
}

namespace {

// The stream handed to the model: trained sink ids first, then the caller's
// tokens. Scoring positions always refer to the caller's stream.
std::vector<int> with_trained_sinks(const ModelConfig& cfg, std::span<const int> stream) {
    return prepend_sink_tokens(stream, cfg);
}

}  // namespace

StreamReport stream_perplexity(const Weights& w, const ModelConfig& cfg, CachePolicy policy,
                               std::span<const int> stream, int64_t skip) {
    if (stream.empty()) throw EmptyInputError("stream_perplexity: empty stream");
    if (static_cast<int64_t>(stream.size()) <= skip)
        throw EmptyInputError("stream_perplexity: stream no longer than skip");
    if (skip < 0) throw IndexError("stream_perplexity: negative skip");

    StreamReport report;
    report.policy = policy;
    const std::vector<int> full = with_trained_sinks(cfg, stream);
    const int64_t n_sinks = cfg.n_sink_tokens;
    const int64_t total = static_cast<int64_t>(full.size());
    const int64_t first_scored = std::max<int64_t>(skip, 1);  // stream index, 0-based

    if (policy.uses_incremental_decode()) {
        DecoderSession session(&w, cfg, policy);
        std::vector<float> logits;
        for (int64_t t = 0; t < total; ++t) {
            const int64_t stream_pos = t - n_sinks;  // position in the caller's stream
            if (stream_pos >= first_scored) {
                report.positions.push_back(stream_pos);
                report.nll.push_back(cross_entropy<float>(logits, full[t]));
            }
            if (t + 1 < total) logits = session.step(full[t]);
        }
    } else {
        // Re-encode the planned window from scratch for every scored token.
        for (int64_t t = first_scored + n_sinks; t < total; ++t) {
            const auto [lo, hi] = plan_recompute(policy, t - 1);
            std::span<const int> ctx(full.data() + lo, static_cast<size_t>(hi - lo + 1));
            const std::vector<float> logits = forward_last_logits<float>(w, cfg, ctx);
            report.positions.push_back(t - n_sinks);
            report.nll.push_back(cross_entropy<float>(logits, full[t]));
        }
    }

    report.tokens_scored = static_cast<int64_t>(report.nll.size());
    report.perplexity = perplexity_from_nll(report.nll);
    return report;
}

std::string report_to_csv(const StreamReport& report) {
    std::ostringstream out;
    out << "position,nll\n";
    for (size_t i = 0; i < report.nll.size(); ++i)
        out << report.positions[i] << ',' << format_float(report.nll[i]) << '\n';
    return out.str();
}

bool flag_non_monotone(const std::vector<SweepRow>& rows) {
    for (size_t i = 1; i < rows.size(); ++i)
        if (rows[i].perplexity > rows[i - 1].perplexity) return true;
    return false;
}

SweepResult sink_ablation(const Weights& w, const ModelConfig& cfg, std::span<const int> xs,
                          int capacity, std::span<const int> stream, int64_t skip) {
    SweepResult result;
    for (int x : xs) {
        if (x >= capacity) throw ConfigError("sink_ablation: x must be below capacity");
        const CachePolicy policy =
            x == 0 ? CachePolicy::window(capacity) : CachePolicy::sink_streaming(x, capacity - x);
        const StreamReport r = stream_perplexity(w, cfg, policy, stream, skip);
        result.rows.push_back({x, capacity - x, r.perplexity});
    }
    result.non_monotone = flag_non_monotone(result.rows);
    return result;
}

SweepResult cache_size_sweep(const Weights& w, const ModelConfig& cfg, int x,
                             std::span<const int> ys, std::span<const int> stream, int64_t skip) {
    SweepResult result;
    for (int y : ys) {
        const CachePolicy policy =
            x == 0 ? CachePolicy::window(y) : CachePolicy::sink_streaming(x, y);
        const StreamReport r = stream_perplexity(w, cfg, policy, stream, skip);
        result.rows.push_back({x, y, r.perplexity});
    }
    result.non_monotone = flag_non_monotone(result.rows);
    return result;
}

std::string sweep_to_csv(const SweepResult& sweep) {
    std::ostringstream out;
    out << "x,y,ppl\n";
    for (const auto& row : sweep.rows)
        out << row.x << ',' << row.y << ',' << format_float(row.perplexity) << '\n';
    return out.str();
}

StreamEvalSample gen_streameval(int n_queries, int lines_per_query, int answer_distance,
                                uint64_t seed) {
    if (n_queries < 1) throw ConfigError("gen_streameval: need at least one query");
    if (lines_per_query < 1) throw ConfigError("gen_streameval: q must be >= 1");
    if (answer_distance < 1) throw ConfigError("gen_streameval: d must be >= 1");

    StreamEvalSample sample;
    sample.n_queries = n_queries;
    sample.lines_per_query = lines_per_query;
    sample.answer_distance = answer_distance;
    sample.seed = seed;

    const int q = lines_per_query, d = answer_distance;
    int first_query_line = ((d + 1 + q - 1) / q) * q;  // smallest multiple of q with key - d >= 1
    const int n_lines = first_query_line + (n_queries - 1) * q;
    if (n_lines > 9999)
        throw ConfigError("gen_streameval: sample needs more than 9999 unique values");

    // Unique 4-digit values via a seeded partial shuffle.
    Rng rng(seed_stream(seed, 29));
    std::vector<int> pool(10000);
    std::iota(pool.begin(), pool.end(), 0);
    for (int i = 0; i < n_lines; ++i) {
        const int j = i + static_cast<int>(rng.uniform_int(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }

    std::string text;
    int queries_emitted = 0;
    for (int key = 1; key <= n_lines; ++key) {
        const int value = pool[key - 1];
        sample.values.push_back(value);
        const std::string line = format_info_line(key, value);
        sample.lines.push_back(line);
        text += line;
        if (key % q == 0 && key - d >= 1 && queries_emitted < n_queries) {
            const int target = key - d;
            char value_text[8];
            std::snprintf(value_text, sizeof(value_text), "%04d", sample.values[target - 1]);
            const std::string prefix = format_query_prefix(target);
            StreamEvalSample::QueryPoint qp;
            qp.line_key = target;
            qp.truth = value_text;
            qp.gen_offset = static_cast<int64_t>(text.size() + prefix.size());
            sample.queries.push_back(std::move(qp));
            text += prefix;
            text += value_text;
            text += '\n';
            ++queries_emitted;
        }
    }
    sample.tokens = tokenize_bytes(text);
    sample.line_token_len = kNeedleLineBytes;
    return sample;
}

namespace {

// Incremental decoder with the trained sink ids pre-fed, matching how such
// models see every training sample.
class ModelLm {
  public:
    ModelLm(const Weights* w, const ModelConfig& cfg, CachePolicy policy)
        : session_(w, cfg, policy) {
        for (int j = 0; j < cfg.n_sink_tokens; ++j) session_.step(cfg.sink_token_id(j));
    }
    std::vector<float> step(int token) { return session_.step(token); }

  private:
    DecoderSession session_;
};

}  // namespace

double score_streameval(const Weights& w, const ModelConfig& cfg, CachePolicy policy,
                        const StreamEvalSample& sample) {
    if (!policy.uses_incremental_decode())
        throw ConfigError("score_streameval: recompute policy not supported here");
    return score_streameval_with(ModelLm(&w, cfg, policy), sample);
}

SinkFractionProfile sink_fraction(const Weights& w, const ModelConfig& cfg,
                                  const TokenStream& corpus, int sentence_len, int n_sentences,
                                  uint64_t seed) {
    if (sentence_len < 2) throw ConfigError("sink_fraction: sentence_len must be >= 2");
    if (static_cast<int64_t>(corpus.tokens.size()) < sentence_len)
        throw ConfigError("sink_fraction: corpus shorter than one sentence");

    const int nh = cfg.n_heads, nl = cfg.n_layers, k = cfg.n_sink_tokens;
    const int seq = sentence_len + k;
    Rng rng(seed_stream(seed, 31));

    // Per (layer, head): running sums of final-row attention mass.
    std::vector<std::vector<double>> first_sum(nl, std::vector<double>(nh, 0.0));
    std::vector<std::vector<double>> sink_sum(nl, std::vector<double>(nh, 0.0));
    std::vector<double> total_sum(nl, 0.0);
    // Per layer: per-sentence head means, for the standard error.
    std::vector<double> first_sq(nl, 0.0), first_mean_sum(nl, 0.0);

    ForwardTrace<float> trace;
    for (int s = 0; s < n_sentences; ++s) {
        const int64_t off = static_cast<int64_t>(
            rng.uniform_int(corpus.tokens.size() - static_cast<size_t>(sentence_len) + 1));
        std::span<const int> data(corpus.tokens.data() + off, sentence_len);
        const std::vector<int> tokens = prepend_sink_tokens(data, cfg);
        model_forward<float>(w, cfg, tokens, &trace);
        for (int l = 0; l < nl; ++l) {
            double head_mean = 0.0;
            for (int h = 0; h < nh; ++h) {
                const auto& probs = trace.layers[l].probs[static_cast<size_t>(seq - 1) * nh + h];
                const double on_first = probs[k];  // first data token sits after the sinks
                first_sum[l][h] += on_first;
                head_mean += on_first;
                if (k > 0) sink_sum[l][h] += probs[0];
                double mass = 0.0;
                for (float p : probs) mass += p;
                total_sum[l] += mass;
            }
            head_mean /= nh;
            first_mean_sum[l] += head_mean;
            first_sq[l] += head_mean * head_mean;
        }
    }

    SinkFractionProfile profile;
    profile.sentence_len = sentence_len;
    profile.n_sentences = n_sentences;
    profile.layers.resize(nl);
    for (int l = 0; l < nl; ++l) {
        auto& layer = profile.layers[l];
        double mean_first = 0.0, mean_sink = 0.0;
        for (int h = 0; h < nh; ++h) {
            first_sum[l][h] /= n_sentences;
            sink_sum[l][h] /= n_sentences;
            mean_first += first_sum[l][h];
            mean_sink += sink_sum[l][h];
        }
        mean_first /= nh;
        mean_sink /= nh;
        double var_first = 0.0, var_sink = 0.0;
        for (int h = 0; h < nh; ++h) {
            var_first += (first_sum[l][h] - mean_first) * (first_sum[l][h] - mean_first);
            var_sink += (sink_sum[l][h] - mean_sink) * (sink_sum[l][h] - mean_sink);
        }
        layer.frac_first = mean_first;
        layer.std_first = std::sqrt(var_first / nh);
        layer.frac_sink = mean_sink;
        layer.std_sink = std::sqrt(var_sink / nh);
        layer.total_mass = total_sum[l] / (static_cast<double>(n_sentences) * nh);
        const double mean_of_means = first_mean_sum[l] / n_sentences;
        const double var_sent =
            std::max(0.0, first_sq[l] / n_sentences - mean_of_means * mean_of_means);
        layer.sem_first = std::sqrt(var_sent / n_sentences);
    }
    return profile;
}

std::string sink_fraction_to_csv(const SinkFractionProfile& profile) {
    std::ostringstream out;
    out << "layer,frac_first,std_first,sem_first,frac_sink,std_sink,total_mass\n";
    for (size_t l = 0; l < profile.layers.size(); ++l) {
        const auto& lay = profile.layers[l];
        out << l << ',' << format_float(lay.frac_first) << ',' << format_float(lay.std_first) << ','
            << format_float(lay.sem_first) << ',' << format_float(lay.frac_sink) << ','
            << format_float(lay.std_sink) << ',' << format_float(lay.total_mass) << '\n';
    }
    return out.str();
}

std::vector<BenchRow> bench_decode(const Weights& w, const ModelConfig& cfg,
                                   CachePolicy::Kind kind, int sink_count,
                                   std::span<const int> cache_sizes, int64_t tokens_per_point,
                                   uint64_t seed) {
    using Clock = std::chrono::steady_clock;
    std::vector<BenchRow> rows;
    for (int size : cache_sizes) {
        if (tokens_per_point < 10LL * size)
            throw ConfigError("bench_decode: tokens_per_point must be >= 10x cache size");
        CachePolicy policy;
        switch (kind) {
            case CachePolicy::Kind::kWindow: policy = CachePolicy::window(size); break;
            case CachePolicy::Kind::kSlidingRecompute:
                policy = CachePolicy::sliding_recompute(size);
                break;
            case CachePolicy::Kind::kSinkStreaming:
                policy = CachePolicy::sink_streaming(sink_count, size - sink_count);
                break;
            default: throw ConfigError("bench_decode: dense has no bounded cache size");
        }

        Rng rng(seed_stream(seed, 37));
        auto next_token = [&]() { return static_cast<int>(rng.uniform_int(cfg.data_vocab())); };

        BenchRow row;
        row.cache_size = size;
        std::array<double, 3> segment_us{};
        const int64_t per_segment = tokens_per_point / 3;

        if (policy.uses_incremental_decode()) {
            DecoderSession session(&w, cfg, policy);
            for (int i = 0; i < size; ++i) session.step(next_token());  // fill to steady state
            for (int seg = 0; seg < 3; ++seg) {
                const auto start = Clock::now();
                for (int64_t i = 0; i < per_segment; ++i) session.step(next_token());
                const auto stop = Clock::now();
                segment_us[seg] =
                    std::chrono::duration<double, std::micro>(stop - start).count() / per_segment;
            }
            row.mem_bytes = session.cache().memory_footprint();
        } else {
            std::vector<int> history;
            for (int i = 0; i < size; ++i) history.push_back(next_token());
            int64_t t = static_cast<int64_t>(history.size()) - 1;
            for (int seg = 0; seg < 3; ++seg) {
                const auto start = Clock::now();
                for (int64_t i = 0; i < per_segment; ++i) {
                    const auto [lo, hi] = plan_recompute(policy, t);
                    std::span<const int> ctx(history.data() + lo, static_cast<size_t>(hi - lo + 1));
                    forward_last_logits<float>(w, cfg, ctx);
                    history.push_back(next_token());
                    ++t;
                }
                const auto stop = Clock::now();
                segment_us[seg] =
                    std::chrono::duration<double, std::micro>(stop - start).count() / per_segment;
            }
            row.mem_bytes = kv_entry_bytes(size, cfg.n_layers, cfg.n_heads, cfg.d_head);
        }

        std::sort(segment_us.begin(), segment_us.end());
        row.latency_us_median = segment_us[1];
        rows.push_back(row);
    }
    return rows;
}

std::string bench_to_csv(const std::vector<BenchRow>& rows) {
    std::ostringstream out;
    out << "cache_size,latency_us_median,mem_bytes\n";
    for (const auto& row : rows)
        out << row.cache_size << ',' << format_float(row.latency_us_median) << ',' << row.mem_bytes
            << '\n';
    return out.str();
}

}  // namespace sinkcache
