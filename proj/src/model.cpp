#include "sinkcache/model.hpp"

#include <algorithm>
#include <cmath>

namespace sinkcache {

std::string to_string(PosKind k) { return k == PosKind::kRope ? "rope" : "alibi"; }

std::string to_string(AttnVariant v) {
    switch (v) {
        case AttnVariant::kSoftmax: return "softmax";
        case AttnVariant::kSoftmax1: return "softmax1";
        case AttnVariant::kSoftmaxZeroKv: return "softmax_zero_kv";
    }
    return "?";
}

PosKind pos_kind_from_string(const std::string& s) {
    if (s == "rope") return PosKind::kRope;
    if (s == "alibi") return PosKind::kAlibi;
    throw ConfigError("unknown position encoding '" + s + "' (want rope|alibi)");
}

AttnVariant attn_variant_from_string(const std::string& s) {
    if (s == "softmax") return AttnVariant::kSoftmax;
    if (s == "softmax1") return AttnVariant::kSoftmax1;
    if (s == "softmax_zero_kv") return AttnVariant::kSoftmaxZeroKv;
    throw ConfigError("unknown attention variant '" + s + "' (want softmax|softmax1)");
}

void ModelConfig::validate() const {
    if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_head < 1)
        throw ConfigError("model config: dimensions must be positive");
    if (d_model != n_heads * d_head) throw ConfigError("model config: d_model != n_heads * d_head");
    if (pos_kind == PosKind::kRope && d_head % 2 != 0)
        throw ConfigError("model config: d_head must be even with rotary positions");
    if (n_sink_tokens < 0 || n_sink_tokens > 2)
        throw ConfigError("model config: n_sink_tokens must be 0, 1 or 2");
    if (vocab_size <= n_sink_tokens) throw ConfigError("model config: vocabulary too small");
    if (train_window < 2) throw ConfigError("model config: train_window must be >= 2");
    if (rope_base <= 0) throw ConfigError("model config: rope_base must be positive");
}

Weights init_weights(const ModelConfig& cfg) {
    cfg.validate();
    Weights w = make_zero_weights<float>(cfg);
    Rng rng(seed_stream(cfg.seed, 0));
    const double base_std = 0.02;
    const double resid_std = base_std / std::sqrt(2.0 * cfg.n_layers);

    auto fill = [&](Matrix<float>& m, double std_dev) {
        for (float& v : m.data) v = static_cast<float>(rng.gaussian() * std_dev);
    };
    fill(w.token_embedding, base_std);
    fill(w.sink_embedding, base_std);
    for (auto& l : w.layers) {
        std::fill(l.attn_norm_gain.begin(), l.attn_norm_gain.end(), 1.0f);
        fill(l.wq, base_std);
        fill(l.wk, base_std);
        fill(l.wv, base_std);
        fill(l.wo, resid_std);
        std::fill(l.mlp_norm_gain.begin(), l.mlp_norm_gain.end(), 1.0f);
        fill(l.w_up, base_std);
        fill(l.w_down, resid_std);
    }
    std::fill(w.final_norm_gain.begin(), w.final_norm_gain.end(), 1.0f);
    fill(w.output_head, base_std);
    return w;
}

std::vector<int> prepend_sink_tokens(std::span<const int> sample, const ModelConfig& cfg) {
    std::vector<int> out;
    out.reserve(sample.size() + cfg.n_sink_tokens);
    for (int j = 0; j < cfg.n_sink_tokens; ++j) out.push_back(cfg.sink_token_id(j));
    out.insert(out.end(), sample.begin(), sample.end());
    return out;
}

LmSample make_lm_sample(std::span<const int> window, const ModelConfig& cfg) {
    if (window.size() < 2) throw ShapeError("make_lm_sample: window too short");
    const size_t s = window.size() - 1;
    LmSample out;
    out.inputs.assign(window.begin(), window.end() - 1);
    out.targets.assign(window.begin() + 1, window.end());
    out.scored.assign(s, 1);
    for (size_t i = 0; i < s; ++i)
        if (cfg.is_sink_id(out.targets[i])) out.scored[i] = 0;
    return out;
}

std::vector<float> decode_step_impl(const Weights& w, const ModelConfig& cfg, KvCache& cache,
                                    int token, RopeTable<float>& rope, DecodeScratch& sc) {
    if (token < 0 || token >= cfg.vocab_size) throw IndexError("decode_step: token out of vocabulary");
    if (cache.n_layers() != cfg.n_layers || cache.n_heads() != cfg.n_heads ||
        cache.d_head() != cfg.d_head)
        throw ShapeError("decode_step: cache shape does not match model");

    const int d = cfg.d_model, dh = cfg.d_head, nh = cfg.n_heads;
    const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
    const bool use_rope = cfg.pos_kind == PosKind::kRope;

    sc.x.resize(d);
    sc.a.resize(d);
    sc.q.resize(d);
    sc.attn.resize(d);
    sc.y.resize(d);
    sc.b.resize(d);
    sc.u.resize(cfg.mlp_hidden());
    sc.g.resize(cfg.mlp_hidden());
    sc.f.resize(d);
    sc.qrot.resize(dh);
    sc.krot.resize(dh);

    auto emb = w.embedding_row(cfg, token);
    std::copy(emb.begin(), emb.end(), sc.x.begin());

    // Per-layer new KV, inserted only after the whole forward pass so every
    // layer sees the same pre-insert cache (the new token attends to itself
    // through the explicit self slot below).
    std::vector<std::vector<float>> new_keys(cfg.n_layers), new_values(cfg.n_layers);

    for (int l = 0; l < cfg.n_layers; ++l) {
        const LayerWeightsT<float>& lw = w.layers[l];
        const KvCache::LayerStore& store = cache.layer(l);
        const int64_t n = cache.size(l);
        if (use_rope) rope.ensure(n + 1);

        rmsnorm<float>(sc.x, lw.attn_norm_gain, sc.a);
        sc.q.assign(d, 0.0f);
        new_keys[l].assign(d, 0.0f);
        new_values[l].assign(d, 0.0f);
        vecmat<float>(sc.a, lw.wq, sc.q);
        vecmat<float>(sc.a, lw.wk, new_keys[l]);
        vecmat<float>(sc.a, lw.wv, new_values[l]);

        std::fill(sc.attn.begin(), sc.attn.end(), 0.0f);
        for (int h = 0; h < nh; ++h) {
            const int off = h * dh;
            std::span<const float> qh(sc.q.data() + off, dh);
            std::span<const float> kh(new_keys[l].data() + off, dh);
            sc.z.resize(n + 1);
            if (use_rope) {
                rope.rotate(qh, n, sc.qrot);
                const float* ks = store.keys[h].data();
                for (int64_t j = 0; j < n; ++j) {
                    rope.rotate({ks + j * dh, static_cast<size_t>(dh)}, j, sc.krot);
                    sc.z[j] = dot(sc.qrot.data(), sc.krot.data(), dh) * scale;
                }
                rope.rotate(kh, n, sc.krot);
                sc.z[n] = dot(sc.qrot.data(), sc.krot.data(), dh) * scale;
            } else {
                const double slope = alibi_slope(h, nh);
                const float* ks = store.keys[h].data();
                for (int64_t j = 0; j < n; ++j)
                    sc.z[j] = dot(qh.data(), ks + j * dh, dh) * scale -
                              static_cast<float>(slope * static_cast<double>(n - j));
                sc.z[n] = dot(qh.data(), kh.data(), dh) * scale;
            }
            detail::attn_probs_inplace(sc.z, cfg.attn_variant);
            float* orow = sc.attn.data() + off;
            const float* vs = store.values[h].data();
            for (int64_t j = 0; j < n; ++j) axpy(sc.z[j], vs + j * dh, orow, dh);
            axpy(sc.z[n], new_values[l].data() + off, orow, dh);
        }

        vecmat<float>(sc.attn, lw.wo, sc.y);
        for (int i = 0; i < d; ++i) sc.x[i] += sc.y[i];

        rmsnorm<float>(sc.x, lw.mlp_norm_gain, sc.b);
        vecmat<float>(sc.b, lw.w_up, sc.u);
        for (int i = 0; i < cfg.mlp_hidden(); ++i) sc.g[i] = gelu(sc.u[i]);
        vecmat<float>(sc.g, lw.w_down, sc.y);
        for (int i = 0; i < d; ++i) sc.x[i] += sc.y[i];
    }

    rmsnorm<float>(sc.x, w.final_norm_gain, sc.f);
    std::vector<float> logits(cfg.vocab_size, 0.0f);
    vecmat<float>(sc.f, w.output_head, logits);

    const int64_t idx = cache.next_original_index();
    for (int l = 0; l < cfg.n_layers; ++l) cache.insert(l, new_keys[l], new_values[l], idx);
    return logits;
}

std::vector<float> decode_step(const Weights& w, const ModelConfig& cfg, KvCache& cache, int token) {
    RopeTable<float> rope(cfg.d_head, cfg.rope_base);
    DecodeScratch scratch;
    return decode_step_impl(w, cfg, cache, token, rope, scratch);
}

}  // namespace sinkcache
