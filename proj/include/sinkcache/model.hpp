#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "sinkcache/config.hpp"
#include "sinkcache/kvcache.hpp"
#include "sinkcache/matrix.hpp"
#include "sinkcache/numerics.hpp"
#include "sinkcache/position.hpp"
#include "sinkcache/weights.hpp"

namespace sinkcache {

// ---------------------------------------------------------------------------
// Single-head attention over an explicit key/value list.
//
// Keys arrive unrotated; for rotary models both the query and every key are
// rotated here, at read time, using the supplied cache positions. Scores are
// scaled by 1/sqrt(d_head); ALiBi adds its distance bias instead of rotating.
// ---------------------------------------------------------------------------
struct AttnSpec {
    PosKind pos_kind = PosKind::kRope;
    AttnVariant variant = AttnVariant::kSoftmax;
    int head = 0;
    int n_heads = 1;
    double rope_base = 10000.0;
};

template <typename T>
std::vector<T> attention_head_forward(std::span<const T> q, int64_t q_position,
                                      const Matrix<T>& keys, const Matrix<T>& values,
                                      std::span<const int64_t> positions, const AttnSpec& spec) {
    const int n = keys.rows;
    const int d = static_cast<int>(q.size());
    if (values.rows != n || static_cast<int>(positions.size()) != n)
        throw ShapeError("attention_head_forward: keys/values/positions length mismatch");
    if (n > 0 && (keys.cols != d || values.cols != d))
        throw ShapeError("attention_head_forward: head dimension mismatch");
    for (int j = 1; j < n; ++j)
        if (positions[j] <= positions[j - 1])
            throw OrderError("attention_head_forward: positions not strictly increasing");

    std::vector<T> out(d, T(0));
    if (n == 0) {
        if (spec.variant == AttnVariant::kSoftmax)
            throw EmptyInputError("attention_head_forward: softmax over empty keys");
        return out;  // all attention falls into the implicit sink
    }

    const T scale = T(1) / std::sqrt(static_cast<T>(d));
    std::vector<T> z(n);
    if (spec.pos_kind == PosKind::kRope) {
        std::vector<T> qrot = apply_rope<T>(q, q_position, spec.rope_base);
        for (int j = 0; j < n; ++j) {
            std::vector<T> r = apply_rope<T>(keys.row(j), positions[j], spec.rope_base);
            z[j] = dot<T>(qrot.data(), r.data(), d) * scale;
        }
    } else {
        for (int j = 0; j < n; ++j)
            z[j] = dot<T>(q.data(), keys.row(j).data(), d) * scale +
                   alibi_bias<T>(spec.head, q_position, positions[j], spec.n_heads);
    }

    std::vector<T> p;
    if (spec.variant == AttnVariant::kSoftmax) {
        p = softmax<T>(z);
    } else if (spec.variant == AttnVariant::kSoftmax1) {
        p = softmax1<T>(z);
    } else {  // kSoftmaxZeroKv: materialize the zero slot, then drop it
        std::vector<T> ext(n + 1);
        ext[0] = T(0);
        std::copy(z.begin(), z.end(), ext.begin() + 1);
        std::vector<T> pe = softmax<T>(ext);
        p.assign(pe.begin() + 1, pe.end());
    }
    for (int j = 0; j < n; ++j) axpy(p[j], values.row(j).data(), out.data(), d);
    return out;
}

// Returns [sink_0 .. sink_{k-1}] ++ sample; sink ids are the reserved top
// vocabulary slots.
std::vector<int> prepend_sink_tokens(std::span<const int> sample, const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Full-sequence forward pass (training / re-computation path).
//
// Pre-norm residual blocks with RMS normalization:
//   x -> norm -> attention -> +x -> norm -> gelu MLP -> +x
// Attention is causal over positions 0..S-1.
// ---------------------------------------------------------------------------
template <typename T>
struct LayerTrace {
    Matrix<T> x_in;              // layer input
    std::vector<T> attn_inv_rms;
    Matrix<T> a;                 // normed input
    Matrix<T> q, k, v;           // k is unrotated
    std::vector<std::vector<T>> probs;  // row (i * n_heads + h), length i+1
    Matrix<T> attn_concat;
    Matrix<T> x_mid;
    std::vector<T> mlp_inv_rms;
    Matrix<T> b;  // normed x_mid
    Matrix<T> u;  // pre-gelu
    Matrix<T> g;  // post-gelu
};

template <typename T>
struct ForwardTrace {
    std::vector<int> inputs;
    std::vector<LayerTrace<T>> layers;
    Matrix<T> x_final;
    std::vector<T> final_inv_rms;
    Matrix<T> f;  // final normed
    Matrix<T> logits;
};

// Runs the model over `tokens`. If `trace` is given it is filled with every
// activation needed for the backward pass. `last_only` computes output-head
// logits for the final position only (everything else is still evaluated).
template <typename T>
Matrix<T> model_forward(const WeightsT<T>& w, const ModelConfig& cfg, std::span<const int> tokens,
                        ForwardTrace<T>* trace = nullptr, bool last_only = false);

template <typename T>
std::vector<T> forward_last_logits(const WeightsT<T>& w, const ModelConfig& cfg,
                                   std::span<const int> tokens) {
    Matrix<T> lg = model_forward<T>(w, cfg, tokens, nullptr, true);
    return {lg.row(0).begin(), lg.row(0).end()};
}

// ---------------------------------------------------------------------------
// Recorded-forward objective: mean next-token NLL over unmasked positions,
// with hand-written backward through every layer kind. backward() requires a
// recorded forward for the same inputs and consumes it.
// ---------------------------------------------------------------------------
template <typename T>
class LmObjective {
  public:
    T forward(const WeightsT<T>& w, const ModelConfig& cfg, std::span<const int> inputs,
              std::span<const int> targets, std::span<const uint8_t> scored);

    // Accumulates parameter gradients of the recorded loss into `grads`.
    void backward(const WeightsT<T>& w, const ModelConfig& cfg, WeightsT<T>& grads);

    const ForwardTrace<T>& trace() const { return trace_; }

  private:
    ForwardTrace<T> trace_;
    std::vector<int> targets_;
    std::vector<uint8_t> scored_;
    int n_scored_ = 0;
    bool has_forward_ = false;
};

// Builds (inputs, targets, scored) from a window of seq_len + 1 tokens.
// Targets that are sink ids are never scored.
struct LmSample {
    std::vector<int> inputs;
    std::vector<int> targets;
    std::vector<uint8_t> scored;
};
LmSample make_lm_sample(std::span<const int> window, const ModelConfig& cfg);

// ---------------------------------------------------------------------------
// Incremental decode against an externally owned cache.
// ---------------------------------------------------------------------------
struct DecodeScratch {
    std::vector<float> x, a, q, k, v, qrot, krot, attn, y, b, u, g, f, z;
};

// One causal decode step: reads all cached KV plus the new token's own
// key/value, then appends that pair to every layer through the cache policy.
// Returns next-token logits. The free function is the convenience form; loops
// should hold a DecoderSession so rotation tables and scratch persist.
std::vector<float> decode_step(const Weights& w, const ModelConfig& cfg, KvCache& cache, int token);

std::vector<float> decode_step_impl(const Weights& w, const ModelConfig& cfg, KvCache& cache,
                                    int token, RopeTable<float>& rope, DecodeScratch& scratch);

class DecoderSession {
  public:
    DecoderSession(const Weights* w, const ModelConfig& cfg, CachePolicy policy)
        : weights_(w), cfg_(cfg), cache_(cfg.n_layers, cfg.n_heads, cfg.d_head, policy),
          rope_(cfg.d_head, cfg.rope_base) {}

    std::vector<float> step(int token) { return decode_step_impl(*weights_, cfg_, cache_, token, rope_, scratch_); }

    KvCache& cache() { return cache_; }
    const KvCache& cache() const { return cache_; }
    const ModelConfig& config() const { return cfg_; }

  private:
    const Weights* weights_;
    ModelConfig cfg_;
    KvCache cache_;
    RopeTable<float> rope_;
    DecodeScratch scratch_;
};

// ---------------------------------------------------------------------------
// Implementation
// ---------------------------------------------------------------------------

namespace detail {

// Attention probabilities for one query given its score row. `z` is consumed.
template <typename T>
inline void attn_probs_inplace(std::vector<T>& z, AttnVariant variant) {
    const int n = static_cast<int>(z.size());
    if (variant == AttnVariant::kSoftmax) {
        softmax_inplace(z.data(), n);
    } else if (variant == AttnVariant::kSoftmax1) {
        softmax1_inplace(z.data(), n);
    } else {
        // Zero-KV route: softmax over [0, z...], implicit slot dropped. The
        // dropped slot carries an all-zero value so it never reaches the
        // output mix.
        std::vector<T> ext(n + 1);
        ext[0] = T(0);
        std::copy(z.begin(), z.end(), ext.begin() + 1);
        softmax_inplace(ext.data(), n + 1);
        std::copy(ext.begin() + 1, ext.end(), z.begin());
    }
}

}  // namespace detail

template <typename T>
Matrix<T> model_forward(const WeightsT<T>& w, const ModelConfig& cfg, std::span<const int> tokens,
                        ForwardTrace<T>* trace, bool last_only) {
    cfg.validate();
    const int s = static_cast<int>(tokens.size());
    if (s == 0) throw EmptyInputError("model_forward: empty token sequence");
    for (int t : tokens)
        if (t < 0 || t >= cfg.vocab_size) throw IndexError("model_forward: token out of vocabulary");
    const int d = cfg.d_model, dh = cfg.d_head, nh = cfg.n_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    Matrix<T> rope_cos, rope_sin;
    if (cfg.pos_kind == PosKind::kRope) {
        rope_cos = Matrix<T>(s, dh / 2);
        rope_sin = Matrix<T>(s, dh / 2);
        for (int p = 0; p < s; ++p)
            rope_rotate_pair_angles<T>(dh, cfg.rope_base, p, rope_cos.row(p), rope_sin.row(p));
    }
    std::vector<double> slopes(nh);
    for (int h = 0; h < nh; ++h) slopes[h] = alibi_slope(h, nh);

    ForwardTrace<T> local;
    ForwardTrace<T>& tr = trace ? *trace : local;
    tr.inputs.assign(tokens.begin(), tokens.end());
    tr.layers.assign(cfg.n_layers, {});

    Matrix<T> x(s, d);
    for (int i = 0; i < s; ++i) {
        auto row = w.embedding_row(cfg, tokens[i]);
        std::copy(row.begin(), row.end(), x.row(i).begin());
    }

    std::vector<T> z;
    Matrix<T> krot(s, dh);
    std::vector<T> qrot(dh);

    for (int l = 0; l < cfg.n_layers; ++l) {
        const LayerWeightsT<T>& lw = w.layers[l];
        LayerTrace<T>& lt = tr.layers[l];
        lt.x_in = x;
        lt.attn_inv_rms.resize(s);
        lt.a = Matrix<T>(s, d);
        for (int i = 0; i < s; ++i)
            lt.attn_inv_rms[i] = rmsnorm<T>(lt.x_in.row(i), lw.attn_norm_gain, lt.a.row(i));

        lt.q = Matrix<T>(s, d);
        lt.k = Matrix<T>(s, d);
        lt.v = Matrix<T>(s, d);
        matmul(lt.a, lw.wq, lt.q);
        matmul(lt.a, lw.wk, lt.k);
        matmul(lt.a, lw.wv, lt.v);

        if (trace) lt.probs.assign(static_cast<size_t>(s) * nh, {});
        lt.attn_concat = Matrix<T>(s, d);
        for (int h = 0; h < nh; ++h) {
            const int off = h * dh;
            if (cfg.pos_kind == PosKind::kRope) {
                for (int j = 0; j < s; ++j)
                    rope_apply_tabled<T>(lt.k.row(j).subspan(off, dh), rope_cos.row(j),
                                         rope_sin.row(j), krot.row(j));
            }
            for (int i = 0; i < s; ++i) {
                z.resize(i + 1);
                if (cfg.pos_kind == PosKind::kRope) {
                    rope_apply_tabled<T>(lt.q.row(i).subspan(off, dh), rope_cos.row(i),
                                         rope_sin.row(i), qrot);
                    for (int j = 0; j <= i; ++j)
                        z[j] = dot<T>(qrot.data(), krot.row(j).data(), dh) * scale;
                } else {
                    const T* qi = lt.q.row(i).data() + off;
                    for (int j = 0; j <= i; ++j)
                        z[j] = dot<T>(qi, lt.k.row(j).data() + off, dh) * scale -
                               static_cast<T>(slopes[h] * (i - j));
                }
                detail::attn_probs_inplace(z, cfg.attn_variant);
                if (trace) lt.probs[static_cast<size_t>(i) * nh + h] = z;
                T* orow = lt.attn_concat.row(i).data() + off;
                for (int j = 0; j <= i; ++j) axpy(z[j], lt.v.row(j).data() + off, orow, dh);
            }
        }

        lt.x_mid = lt.x_in;
        matmul(lt.attn_concat, lw.wo, lt.x_mid, /*accumulate=*/true);

        lt.mlp_inv_rms.resize(s);
        lt.b = Matrix<T>(s, d);
        for (int i = 0; i < s; ++i)
            lt.mlp_inv_rms[i] = rmsnorm<T>(lt.x_mid.row(i), lw.mlp_norm_gain, lt.b.row(i));
        lt.u = Matrix<T>(s, cfg.mlp_hidden());
        matmul(lt.b, lw.w_up, lt.u);
        lt.g = lt.u;
        for (T& v : lt.g.data) v = gelu(v);
        x = lt.x_mid;
        matmul(lt.g, lw.w_down, x, /*accumulate=*/true);
    }

    tr.x_final = x;
    tr.final_inv_rms.resize(s);
    tr.f = Matrix<T>(s, d);
    for (int i = 0; i < s; ++i)
        tr.final_inv_rms[i] = rmsnorm<T>(tr.x_final.row(i), w.final_norm_gain, tr.f.row(i));

    if (last_only) {
        Matrix<T> logits(1, cfg.vocab_size);
        vecmat<T>(tr.f.row(s - 1), w.output_head, logits.row(0));
        return logits;
    }
    tr.logits = Matrix<T>(s, cfg.vocab_size);
    matmul(tr.f, w.output_head, tr.logits);
    return tr.logits;
}

template <typename T>
T LmObjective<T>::forward(const WeightsT<T>& w, const ModelConfig& cfg, std::span<const int> inputs,
                          std::span<const int> targets, std::span<const uint8_t> scored) {
    if (inputs.size() != targets.size() || inputs.size() != scored.size())
        throw ShapeError("LmObjective::forward: inputs/targets/scored length mismatch");
    model_forward<T>(w, cfg, inputs, &trace_);
    targets_.assign(targets.begin(), targets.end());
    scored_.assign(scored.begin(), scored.end());
    n_scored_ = 0;
    T total = 0;
    for (size_t i = 0; i < targets_.size(); ++i) {
        if (!scored_[i]) continue;
        total += cross_entropy<T>(trace_.logits.row(static_cast<int>(i)), targets_[i]);
        ++n_scored_;
    }
    has_forward_ = true;
    return n_scored_ ? total / static_cast<T>(n_scored_) : T(0);
}

template <typename T>
void LmObjective<T>::backward(const WeightsT<T>& w, const ModelConfig& cfg, WeightsT<T>& grads) {
    if (!has_forward_) throw StateError("LmObjective::backward: no recorded forward pass");
    has_forward_ = false;

    const int s = static_cast<int>(trace_.inputs.size());
    const int d = cfg.d_model, dh = cfg.d_head, nh = cfg.n_heads;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));

    Matrix<T> rope_cos, rope_sin;
    if (cfg.pos_kind == PosKind::kRope) {
        rope_cos = Matrix<T>(s, dh / 2);
        rope_sin = Matrix<T>(s, dh / 2);
        for (int p = 0; p < s; ++p)
            rope_rotate_pair_angles<T>(dh, cfg.rope_base, p, rope_cos.row(p), rope_sin.row(p));
    }

    // d(loss)/d(logits): softmax minus one-hot on scored rows.
    Matrix<T> dlogits(s, cfg.vocab_size);
    if (n_scored_ > 0) {
        const T inv_n = T(1) / static_cast<T>(n_scored_);
        for (int i = 0; i < s; ++i) {
            if (!scored_[i]) continue;
            auto lrow = trace_.logits.row(i);
            std::vector<T> p = softmax<T>(lrow);
            T* drow = dlogits.row(i).data();
            for (int j = 0; j < cfg.vocab_size; ++j) drow[j] = p[j] * inv_n;
            drow[targets_[i]] -= inv_n;
        }
    }

    matmul_at_b(trace_.f, dlogits, grads.output_head);
    Matrix<T> df(s, d);
    matmul_a_bt(dlogits, w.output_head, df);

    Matrix<T> dx(s, d);
    for (int i = 0; i < s; ++i)
        rmsnorm_backward<T>(trace_.x_final.row(i), w.final_norm_gain, trace_.final_inv_rms[i],
                            df.row(i), dx.row(i), grads.final_norm_gain);

    std::vector<T> dp, dz;
    std::vector<T> qrot(dh), dqrot(dh), tmp(dh);
    Matrix<T> krot(s, dh), dkrot(s, dh);

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
        const LayerWeightsT<T>& lw = w.layers[l];
        LayerWeightsT<T>& gw = grads.layers[l];
        LayerTrace<T>& lt = trace_.layers[l];

        // MLP block: x_out = x_mid + gelu(b . w_up) . w_down
        matmul_at_b(lt.g, dx, gw.w_down);
        Matrix<T> dg(s, cfg.mlp_hidden());
        matmul_a_bt(dx, lw.w_down, dg);
        for (size_t i = 0; i < dg.data.size(); ++i) dg.data[i] *= gelu_grad(lt.u.data[i]);
        matmul_at_b(lt.b, dg, gw.w_up);
        Matrix<T> db(s, d);
        matmul_a_bt(dg, lw.w_up, db);
        Matrix<T>& dx_mid = dx;  // residual branch flows straight through
        for (int i = 0; i < s; ++i)
            rmsnorm_backward<T>(lt.x_mid.row(i), lw.mlp_norm_gain, lt.mlp_inv_rms[i], db.row(i),
                                dx_mid.row(i), gw.mlp_norm_gain);

        // Attention block: x_mid = x_in + concat_heads(attn) . wo
        matmul_at_b(lt.attn_concat, dx_mid, gw.wo);
        Matrix<T> dconcat(s, d);
        matmul_a_bt(dx_mid, lw.wo, dconcat);

        Matrix<T> dq(s, d), dk(s, d), dv(s, d);
        for (int h = 0; h < nh; ++h) {
            const int off = h * dh;
            if (cfg.pos_kind == PosKind::kRope) {
                for (int j = 0; j < s; ++j)
                    rope_apply_tabled<T>(lt.k.row(j).subspan(off, dh), rope_cos.row(j),
                                         rope_sin.row(j), krot.row(j));
            }
            dkrot.fill(T(0));
            for (int i = 0; i < s; ++i) {
                const std::vector<T>& p = lt.probs[static_cast<size_t>(i) * nh + h];
                const T* doi = dconcat.row(i).data() + off;
                dp.resize(i + 1);
                dz.resize(i + 1);
                for (int j = 0; j <= i; ++j) dp[j] = dot<T>(doi, lt.v.row(j).data() + off, dh);
                softmax_backward<T>(p, dp, dz);
                for (int j = 0; j <= i; ++j) axpy(p[j], doi, dv.row(j).data() + off, dh);
                if (cfg.pos_kind == PosKind::kRope) {
                    rope_apply_tabled<T>(lt.q.row(i).subspan(off, dh), rope_cos.row(i),
                                         rope_sin.row(i), qrot);
                    std::fill(dqrot.begin(), dqrot.end(), T(0));
                    for (int j = 0; j <= i; ++j) {
                        const T g = dz[j] * scale;
                        axpy(g, krot.row(j).data(), dqrot.data(), dh);
                        axpy(g, qrot.data(), dkrot.row(j).data(), dh);
                    }
                    // un-rotate: gradient through a rotation is the inverse rotation
                    const T* cr = rope_cos.row(i).data();
                    const T* sr = rope_sin.row(i).data();
                    T* dqi = dq.row(i).data() + off;
                    for (int m = 0; m < dh / 2; ++m) {
                        dqi[2 * m] += cr[m] * dqrot[2 * m] + sr[m] * dqrot[2 * m + 1];
                        dqi[2 * m + 1] += -sr[m] * dqrot[2 * m] + cr[m] * dqrot[2 * m + 1];
                    }
                } else {
                    const T* qi = lt.q.row(i).data() + off;
                    T* dqi = dq.row(i).data() + off;
                    for (int j = 0; j <= i; ++j) {
                        const T g = dz[j] * scale;
                        axpy(g, lt.k.row(j).data() + off, dqi, dh);
                        axpy(g, qi, dkrot.row(j).data(), dh);
                    }
                }
            }
            if (cfg.pos_kind == PosKind::kRope) {
                for (int j = 0; j < s; ++j) {
                    const T* cr = rope_cos.row(j).data();
                    const T* sr = rope_sin.row(j).data();
                    T* dkj = dk.row(j).data() + off;
                    const T* dr = dkrot.row(j).data();
                    for (int m = 0; m < dh / 2; ++m) {
                        dkj[2 * m] += cr[m] * dr[2 * m] + sr[m] * dr[2 * m + 1];
                        dkj[2 * m + 1] += -sr[m] * dr[2 * m] + cr[m] * dr[2 * m + 1];
                    }
                }
            } else {
                for (int j = 0; j < s; ++j)
                    axpy(T(1), dkrot.row(j).data(), dk.row(j).data() + off, dh);
            }
        }

        matmul_at_b(lt.a, dq, gw.wq);
        matmul_at_b(lt.a, dk, gw.wk);
        matmul_at_b(lt.a, dv, gw.wv);
        Matrix<T> da(s, d);
        matmul_a_bt(dq, lw.wq, da);
        matmul_a_bt(dk, lw.wk, da, /*accumulate=*/true);
        matmul_a_bt(dv, lw.wv, da, /*accumulate=*/true);

        Matrix<T>& dx_in = dx;  // residual again: dx already carries the skip-path term
        for (int i = 0; i < s; ++i)
            rmsnorm_backward<T>(lt.x_in.row(i), lw.attn_norm_gain, lt.attn_inv_rms[i], da.row(i),
                                dx_in.row(i), gw.attn_norm_gain);
    }

    for (int i = 0; i < s; ++i) {
        const int t = trace_.inputs[i];
        T* dst = cfg.is_sink_id(t) ? grads.sink_embedding.row(t - cfg.data_vocab()).data()
                                   : grads.token_embedding.row(t).data();
        axpy(T(1), dx.row(i).data(), dst, d);
    }
}

}  // namespace sinkcache
