#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "sinkcache/errors.hpp"

namespace sinkcache {

enum class CorpusKind { kMarkov, kCopy, kNeedle };

CorpusKind corpus_kind_from_string(const std::string& s);
std::string to_string(CorpusKind k);

struct TokenStream {
    int vocab_size = 0;
    std::vector<int> tokens;
};

inline constexpr int kMarkovAlphabet = 64;
inline constexpr int kCopyAlphabet = 64;
inline constexpr int kNeedleAlphabet = 256;  // raw bytes

// Order-2 chain over 64 symbols. The transition table is a fixed property of
// the generator (seed only moves the sampled path): contexts collapse to 64
// classes via the low bits of the last two tokens, each class has four
// successor candidates with probabilities 0.60 / 0.25 / 0.10 / 0.05.
inline constexpr std::array<double, 4> kMarkovProbs = {0.60, 0.25, 0.10, 0.05};
int markov_context_class(int prev2, int prev1);
std::array<int, 4> markov_successors(int context_class);

// Line geometry shared by the needle corpus and the streaming retrieval
// eval. Every line tokenizes to exactly kNeedleLineBytes bytes.
//   info:  "line 000042: REGISTER_CONTENT is 1234\n"
//   query: "ask? 000042: REGISTER_CONTENT is "   (value + newline follow)
std::string format_info_line(int key, int value);
std::string format_query_prefix(int key);
std::optional<std::pair<int, int>> parse_info_line(std::string_view line);
inline constexpr int kNeedleLineBytes = 38;
inline constexpr int kNeedleValueDigits = 4;
// Query cadence baked into the needle *training* corpus.
inline constexpr int kNeedleCorpusQueryEvery = 2;
inline constexpr int kNeedleCorpusAnswerDistance = 1;

std::vector<int> tokenize_bytes(std::string_view text);
std::string detokenize_bytes(const std::vector<int>& tokens);

// Deterministic synthetic stream of exactly `size` tokens.
//   markov: the chain above.
//   copy:   random segments of length 16..64 repeated 2..4 times.
//   needle: numbered register lines with inline retrieval queries (answers
//           included), so models trained on it learn in-cache retrieval.
TokenStream make_corpus(CorpusKind kind, int64_t size, uint64_t seed);

}  // namespace sinkcache
