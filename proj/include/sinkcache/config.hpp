#pragma once

#include <cstdint>
#include <string>

#include "sinkcache/errors.hpp"

namespace sinkcache {

enum class PosKind { kRope, kAlibi };

// kSoftmaxZeroKv is softmax attention over the real scores plus one frozen
// all-zero key/value slot. It computes exactly what kSoftmax1 computes by a
// different route and exists so the equivalence can be checked end to end
// (including whole training runs). The CLI only exposes the first two.
enum class AttnVariant { kSoftmax, kSoftmax1, kSoftmaxZeroKv };

std::string to_string(PosKind k);
std::string to_string(AttnVariant v);
PosKind pos_kind_from_string(const std::string& s);
AttnVariant attn_variant_from_string(const std::string& s);

struct ModelConfig {
    int n_layers = 2;
    int n_heads = 4;
    int d_model = 64;
    int d_head = 16;
    int vocab_size = 64;
    int train_window = 64;  // pre-training sequence length L
    PosKind pos_kind = PosKind::kRope;
    AttnVariant attn_variant = AttnVariant::kSoftmax;
    int n_sink_tokens = 0;  // learnable sink tokens prepended to every sample
    double rope_base = 10000.0;
    uint64_t seed = 0;

    int mlp_hidden() const { return 4 * d_model; }

    // Sink ids occupy the top n_sink_tokens vocabulary slots, above the data
    // alphabet. data_vocab() is the first reserved id.
    int data_vocab() const { return vocab_size - n_sink_tokens; }
    int sink_token_id(int j) const { return data_vocab() + j; }
    bool is_sink_id(int token) const { return n_sink_tokens > 0 && token >= data_vocab(); }

    void validate() const;
};

}  // namespace sinkcache
