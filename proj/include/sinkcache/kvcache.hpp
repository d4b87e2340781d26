#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sinkcache/errors.hpp"

namespace sinkcache {

// Eviction policy for the per-layer key/value store.
//   dense      : unbounded, never evicts          -- "dense"
//   window     : keep the y most recent tokens    -- "window:y"
//   recompute  : no persistent cache; the caller re-encodes the last L
//                tokens from scratch each step    -- "recompute:L"
//   sink       : keep the first x tokens ever seen plus the y most
//                recent ones                      -- "sink:x+y"
struct CachePolicy {
    enum class Kind { kDense, kWindow, kSlidingRecompute, kSinkStreaming };

    Kind kind = Kind::kDense;
    int sinks = 0;   // x
    int recent = 0;  // y (window length / recompute L live here too)

    static CachePolicy dense() { return {Kind::kDense, 0, 0}; }
    static CachePolicy window(int y);
    static CachePolicy sliding_recompute(int l);
    // Four initial tokens suffice in practice, hence the default.
    static CachePolicy sink_streaming(int x, int y);
    static CachePolicy sink_streaming(int y) { return sink_streaming(4, y); }

    // Total entries the store may hold; -1 means unbounded.
    int64_t capacity() const {
        switch (kind) {
            case Kind::kDense: return -1;
            case Kind::kWindow: return recent;
            case Kind::kSlidingRecompute: return recent;
            case Kind::kSinkStreaming: return sinks + recent;
        }
        return -1;
    }

    bool uses_incremental_decode() const { return kind != Kind::kSlidingRecompute; }

    std::string to_string() const;
    // Grammar: dense | window:y | recompute:L | sink:x+y
    static CachePolicy parse(const std::string& text);

    bool operator==(const CachePolicy&) const = default;
};

// Token range [first, last] the caller must re-encode at step t under a
// sliding-recompute policy. Positions are assigned 0..len-1 on re-encode.
std::pair<int64_t, int64_t> plan_recompute(const CachePolicy& policy, int64_t t);

// Per-layer key/value store. Keys are held exactly as inserted (for rotary
// models that means pre-rotation); values are final. Storage order is
// insertion order with evictions removing the oldest non-sink entry, so the
// index of an entry in storage *is* its cache position.
class KvCache {
  public:
    struct LayerStore {
        std::vector<int64_t> original_indices;
        // keys[h] / values[h]: n_entries x d_head, row-major, per head.
        std::vector<std::vector<float>> keys;
        std::vector<std::vector<float>> values;
    };

    KvCache(int n_layers, int n_heads, int d_head, CachePolicy policy);

    // key/value: n_heads * d_head floats, head-major. original_index must
    // exceed every index already in the layer.
    void insert(int layer, std::span<const float> key, std::span<const float> value,
                int64_t original_index);

    // Contiguous in-cache positions [0, n); the next decoded token takes
    // position n regardless of how many original tokens were evicted.
    std::vector<int64_t> cache_positions(int layer) const;
    int64_t next_position(int layer) const { return size(layer); }

    int64_t size(int layer) const { return static_cast<int64_t>(layers_[layer].original_indices.size()); }

    // Smallest original index that may be inserted next (indices are shared
    // across layers because eviction is per-token, not per-layer).
    int64_t next_original_index() const {
        const auto& idx = layers_[0].original_indices;
        return idx.empty() ? 0 : idx.back() + 1;
    }
    int n_layers() const { return static_cast<int>(layers_.size()); }
    int n_heads() const { return n_heads_; }
    int d_head() const { return d_head_; }
    const CachePolicy& policy() const { return policy_; }
    const LayerStore& layer(int i) const { return layers_[i]; }

    // Exact bytes of stored KV floats across all layers.
    size_t memory_footprint() const;

    // One line per layer listing retained original indices.
    std::string debug_dump() const;

  private:
    std::vector<LayerStore> layers_;
    int n_heads_;
    int d_head_;
    CachePolicy policy_;
};

inline size_t kv_entry_bytes(int64_t entries, int n_layers, int n_heads, int d_head) {
    return static_cast<size_t>(entries) * n_layers * n_heads * d_head * 2 * sizeof(float);
}

}  // namespace sinkcache
