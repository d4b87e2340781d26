#include "sinkcache/kvcache.hpp"

#include <numeric>
#include <sstream>

namespace sinkcache {

CachePolicy CachePolicy::window(int y) {
    if (y < 1) throw ConfigError("window policy: y must be >= 1");
    return {Kind::kWindow, 0, y};
}

CachePolicy CachePolicy::sliding_recompute(int l) {
    if (l < 1) throw ConfigError("recompute policy: L must be >= 1");
    return {Kind::kSlidingRecompute, 0, l};
}

CachePolicy CachePolicy::sink_streaming(int x, int y) {
    if (x < 0) throw ConfigError("sink policy: x must be >= 0");
    if (y < 1) throw ConfigError("sink policy: y must be >= 1");
    return {Kind::kSinkStreaming, x, y};
}

std::string CachePolicy::to_string() const {
    switch (kind) {
        case Kind::kDense: return "dense";
        case Kind::kWindow: return "window:" + std::to_string(recent);
        case Kind::kSlidingRecompute: return "recompute:" + std::to_string(recent);
        case Kind::kSinkStreaming:
            return "sink:" + std::to_string(sinks) + "+" + std::to_string(recent);
    }
    return "?";
}

CachePolicy CachePolicy::parse(const std::string& text) {
    auto parse_int = [&](const std::string& s) {
        size_t used = 0;
        int v = 0;
        try {
            v = std::stoi(s, &used);
        } catch (const std::exception&) {
            throw ConfigError("bad policy '" + text + "'");
        }
        if (used != s.size()) throw ConfigError("bad policy '" + text + "'");
        return v;
    };
    if (text == "dense") return dense();
    if (text.rfind("window:", 0) == 0) return window(parse_int(text.substr(7)));
    if (text.rfind("recompute:", 0) == 0) return sliding_recompute(parse_int(text.substr(10)));
    if (text.rfind("sink:", 0) == 0) {
        const std::string rest = text.substr(5);
        const size_t plus = rest.find('+');
        if (plus == std::string::npos) throw ConfigError("bad policy '" + text + "' (want sink:x+y)");
        return sink_streaming(parse_int(rest.substr(0, plus)), parse_int(rest.substr(plus + 1)));
    }
    throw ConfigError("bad policy '" + text + "' (want dense | window:y | recompute:L | sink:x+y)");
}

std::pair<int64_t, int64_t> plan_recompute(const CachePolicy& policy, int64_t t) {
    if (policy.kind != CachePolicy::Kind::kSlidingRecompute)
        throw ConfigError("plan_recompute: policy is not recompute");
    if (t < 0) throw IndexError("plan_recompute: negative step");
    const int64_t l = policy.recent;
    return {std::max<int64_t>(0, t - l + 1), t};
}

KvCache::KvCache(int n_layers, int n_heads, int d_head, CachePolicy policy)
    : layers_(n_layers), n_heads_(n_heads), d_head_(d_head), policy_(policy) {
    if (n_layers < 1 || n_heads < 1 || d_head < 1) throw ConfigError("KvCache: bad dimensions");
    for (auto& l : layers_) {
        l.keys.resize(n_heads_);
        l.values.resize(n_heads_);
    }
}

void KvCache::insert(int layer, std::span<const float> key, std::span<const float> value,
                     int64_t original_index) {
    if (layer < 0 || layer >= n_layers()) throw IndexError("KvCache::insert: bad layer");
    const size_t want = static_cast<size_t>(n_heads_) * d_head_;
    if (key.size() != want || value.size() != want)
        throw ShapeError("KvCache::insert: key/value size mismatch");
    LayerStore& store = layers_[layer];
    if (!store.original_indices.empty() && original_index <= store.original_indices.back())
        throw OrderError("KvCache::insert: original_index not increasing");

    store.original_indices.push_back(original_index);
    for (int h = 0; h < n_heads_; ++h) {
        store.keys[h].insert(store.keys[h].end(), key.begin() + h * d_head_,
                             key.begin() + (h + 1) * d_head_);
        store.values[h].insert(store.values[h].end(), value.begin() + h * d_head_,
                               value.begin() + (h + 1) * d_head_);
    }

    const int64_t cap = policy_.capacity();
    if (cap < 0) return;
    if (static_cast<int64_t>(store.original_indices.size()) <= cap) return;

    // Evict the oldest entry that is not one of the protected sink slots.
    // Sinks are the first x entries ever inserted; they sit at the front of
    // storage and stay there for the lifetime of the cache.
    int64_t victim = 0;
    if (policy_.kind == CachePolicy::Kind::kSinkStreaming) victim = policy_.sinks;
    store.original_indices.erase(store.original_indices.begin() + victim);
    for (int h = 0; h < n_heads_; ++h) {
        store.keys[h].erase(store.keys[h].begin() + victim * d_head_,
                            store.keys[h].begin() + (victim + 1) * d_head_);
        store.values[h].erase(store.values[h].begin() + victim * d_head_,
                              store.values[h].begin() + (victim + 1) * d_head_);
    }
}

std::vector<int64_t> KvCache::cache_positions(int layer) const {
    std::vector<int64_t> pos(layers_[layer].original_indices.size());
    std::iota(pos.begin(), pos.end(), 0);
    return pos;
}

size_t KvCache::memory_footprint() const {
    size_t entries = 0;
    for (const auto& l : layers_) entries += l.original_indices.size();
    return entries * n_heads_ * d_head_ * 2 * sizeof(float);
}

std::string KvCache::debug_dump() const {
    std::ostringstream out;
    for (int l = 0; l < n_layers(); ++l) {
        out << "layer " << l << ":";
        for (int64_t idx : layers_[l].original_indices) out << ' ' << idx;
        out << '\n';
    }
    return out.str();
}

}  // namespace sinkcache
