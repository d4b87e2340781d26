#include "sinkcache/corpus.hpp"

#include <cstdio>

#include "sinkcache/rng.hpp"

namespace sinkcache {

CorpusKind corpus_kind_from_string(const std::string& s) {
    if (s == "markov") return CorpusKind::kMarkov;
    if (s == "copy") return CorpusKind::kCopy;
    if (s == "needle") return CorpusKind::kNeedle;
    throw ConfigError("unknown corpus kind '" + s + "' (want markov|copy|needle)");
}

std::string to_string(CorpusKind k) {
    switch (k) {
        case CorpusKind::kMarkov: return "markov";
        case CorpusKind::kCopy: return "copy";
        case CorpusKind::kNeedle: return "needle";
    }
    return "?";
}

int markov_context_class(int prev2, int prev1) { return ((prev2 & 3) << 2) | (prev1 & 3); }

std::array<int, 4> markov_successors(int context_class) {
    // Low bits of the four candidates are a per-class shuffle of {0,1,2,3},
    // so every context class stays reachable and the chain mixes fast enough
    // for counting oracles to be sharp. High bits are hash noise.
    std::array<int, 4> low = {0, 1, 2, 3};
    for (int j = 3; j > 0; --j) {
        const int k = static_cast<int>(seed_stream(0x5eed5eedULL + context_class, j) % (j + 1));
        std::swap(low[j], low[k]);
    }
    std::array<int, 4> out{};
    for (int j = 0; j < 4; ++j) {
        const int high = static_cast<int>(seed_stream(0xface0fULL + context_class, j) % (kMarkovAlphabet / 4));
        out[j] = high * 4 + low[j];
    }
    return out;
}

std::string format_info_line(int key, int value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "line %06d: REGISTER_CONTENT is %04d\n", key, value);
    return buf;
}

std::string format_query_prefix(int key) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "ask? %06d: REGISTER_CONTENT is ", key);
    return buf;
}

std::optional<std::pair<int, int>> parse_info_line(std::string_view line) {
    int key = 0, value = 0;
    std::string text(line);
    if (std::sscanf(text.c_str(), "line %d: REGISTER_CONTENT is %d", &key, &value) != 2)
        return std::nullopt;
    return std::make_pair(key, value);
}

std::vector<int> tokenize_bytes(std::string_view text) {
    std::vector<int> out;
    out.reserve(text.size());
    for (unsigned char c : text) out.push_back(static_cast<int>(c));
    return out;
}

std::string detokenize_bytes(const std::vector<int>& tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (int t : tokens) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    return out;
}

namespace {

TokenStream make_markov(int64_t size, uint64_t seed) {
    TokenStream out{kMarkovAlphabet, {}};
    out.tokens.reserve(size);
    Rng rng(seed_stream(seed, 1));
    int prev2 = static_cast<int>(rng.uniform_int(kMarkovAlphabet));
    int prev1 = static_cast<int>(rng.uniform_int(kMarkovAlphabet));
    if (size >= 1) out.tokens.push_back(prev2);
    if (size >= 2) out.tokens.push_back(prev1);
    while (static_cast<int64_t>(out.tokens.size()) < size) {
        const auto cands = markov_successors(markov_context_class(prev2, prev1));
        const double u = rng.uniform();
        int next = cands[3];
        double acc = 0.0;
        for (int j = 0; j < 4; ++j) {
            acc += kMarkovProbs[j];
            if (u < acc) {
                next = cands[j];
                break;
            }
        }
        out.tokens.push_back(next);
        prev2 = prev1;
        prev1 = next;
    }
    return out;
}

TokenStream make_copy(int64_t size, uint64_t seed) {
    TokenStream out{kCopyAlphabet, {}};
    out.tokens.reserve(size + 256);
    Rng rng(seed_stream(seed, 2));
    while (static_cast<int64_t>(out.tokens.size()) < size) {
        const int seg_len = 16 + static_cast<int>(rng.uniform_int(49));
        const int repeats = 2 + static_cast<int>(rng.uniform_int(3));
        std::vector<int> seg(seg_len);
        for (int& t : seg) t = static_cast<int>(rng.uniform_int(kCopyAlphabet));
        for (int r = 0; r < repeats; ++r) out.tokens.insert(out.tokens.end(), seg.begin(), seg.end());
    }
    out.tokens.resize(size);
    return out;
}

TokenStream make_needle(int64_t size, uint64_t seed) {
    TokenStream out{kNeedleAlphabet, {}};
    out.tokens.reserve(size + kNeedleLineBytes);
    Rng rng(seed_stream(seed, 3));
    std::vector<int> values;  // value of info line key i+1
    std::string text;
    int key = 0;
    while (static_cast<int64_t>(out.tokens.size()) < size) {
        ++key;
        const int value = static_cast<int>(rng.uniform_int(10000));
        values.push_back(value);
        text = format_info_line(key, value);
        if (key % kNeedleCorpusQueryEvery == 0 && key - kNeedleCorpusAnswerDistance >= 1) {
            const int target = key - kNeedleCorpusAnswerDistance;
            char buf[16];
            std::snprintf(buf, sizeof(buf), "%04d\n", values[target - 1]);
            text += format_query_prefix(target) + buf;
        }
        for (unsigned char c : text) out.tokens.push_back(static_cast<int>(c));
    }
    out.tokens.resize(size);
    return out;
}

}  // namespace

TokenStream make_corpus(CorpusKind kind, int64_t size, uint64_t seed) {
    if (size <= 0) throw ConfigError("make_corpus: size must be positive");
    switch (kind) {
        case CorpusKind::kMarkov: return make_markov(size, seed);
        case CorpusKind::kCopy: return make_copy(size, seed);
        case CorpusKind::kNeedle: return make_needle(size, seed);
    }
    throw ConfigError("make_corpus: bad kind");
}

}  // namespace sinkcache
