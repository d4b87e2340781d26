#pragma once

#include <span>
#include <string>
#include <vector>

#include "sinkcache/config.hpp"
#include "sinkcache/matrix.hpp"
#include "sinkcache/rng.hpp"

namespace sinkcache {

template <typename T>
struct LayerWeightsT {
    std::vector<T> attn_norm_gain;  // d_model
    Matrix<T> wq, wk, wv, wo;       // d_model x d_model
    std::vector<T> mlp_norm_gain;   // d_model
    Matrix<T> w_up;                 // d_model x hidden
    Matrix<T> w_down;               // hidden x d_model
};

// Untied embeddings, no biases anywhere; both facts are recorded in the
// checkpoint header. Sink-token embeddings live in their own table even
// though sink ids share the vocabulary space.
template <typename T>
struct WeightsT {
    Matrix<T> token_embedding;  // data_vocab x d_model
    Matrix<T> sink_embedding;   // n_sink_tokens x d_model
    std::vector<LayerWeightsT<T>> layers;
    std::vector<T> final_norm_gain;  // d_model
    Matrix<T> output_head;           // d_model x vocab_size

    std::span<const T> embedding_row(const ModelConfig& cfg, int token) const {
        if (cfg.is_sink_id(token)) return sink_embedding.row(token - cfg.data_vocab());
        return token_embedding.row(token);
    }
};

using Weights = WeightsT<float>;

template <typename T>
struct TensorRef {
    std::string name;
    std::vector<int> shape;
    std::span<T> data;
};

// Visits every trainable tensor in a fixed, documented order. Serialization,
// the optimizer, and gradient checks all iterate through here so they can
// never disagree about what a "parameter" is.
template <typename T, typename Fn>
void for_each_tensor(WeightsT<T>& w, Fn&& fn) {
    auto mat = [&](const std::string& name, Matrix<T>& m) {
        fn(TensorRef<T>{name, {m.rows, m.cols}, std::span<T>(m.data)});
    };
    auto vec = [&](const std::string& name, std::vector<T>& v) {
        fn(TensorRef<T>{name, {static_cast<int>(v.size())}, std::span<T>(v)});
    };
    mat("token_embedding", w.token_embedding);
    if (w.sink_embedding.rows > 0) mat("sink_embedding", w.sink_embedding);
    for (size_t i = 0; i < w.layers.size(); ++i) {
        const std::string p = "layer" + std::to_string(i) + ".";
        vec(p + "attn_norm", w.layers[i].attn_norm_gain);
        mat(p + "wq", w.layers[i].wq);
        mat(p + "wk", w.layers[i].wk);
        mat(p + "wv", w.layers[i].wv);
        mat(p + "wo", w.layers[i].wo);
        vec(p + "mlp_norm", w.layers[i].mlp_norm_gain);
        mat(p + "w_up", w.layers[i].w_up);
        mat(p + "w_down", w.layers[i].w_down);
    }
    vec("final_norm", w.final_norm_gain);
    mat("output_head", w.output_head);
}

template <typename T, typename Fn>
void for_each_tensor(const WeightsT<T>& w, Fn&& fn) {
    for_each_tensor(const_cast<WeightsT<T>&>(w), [&](TensorRef<T> ref) {
        fn(TensorRef<const T>{ref.name, ref.shape, std::span<const T>(ref.data)});
    });
}

// Flat view over all tensors, in visitor order. Two weight sets built from
// the same config always produce aligned lists.
template <typename T>
std::vector<TensorRef<T>> tensor_list(WeightsT<T>& w) {
    std::vector<TensorRef<T>> out;
    for_each_tensor(w, [&](TensorRef<T> r) { out.push_back(std::move(r)); });
    return out;
}

template <typename T>
WeightsT<T> make_zero_weights(const ModelConfig& cfg) {
    WeightsT<T> w;
    w.token_embedding = Matrix<T>(cfg.data_vocab(), cfg.d_model);
    w.sink_embedding = Matrix<T>(cfg.n_sink_tokens, cfg.d_model);
    w.layers.resize(cfg.n_layers);
    for (auto& l : w.layers) {
        l.attn_norm_gain.assign(cfg.d_model, T(0));
        l.wq = Matrix<T>(cfg.d_model, cfg.d_model);
        l.wk = Matrix<T>(cfg.d_model, cfg.d_model);
        l.wv = Matrix<T>(cfg.d_model, cfg.d_model);
        l.wo = Matrix<T>(cfg.d_model, cfg.d_model);
        l.mlp_norm_gain.assign(cfg.d_model, T(0));
        l.w_up = Matrix<T>(cfg.d_model, cfg.mlp_hidden());
        l.w_down = Matrix<T>(cfg.mlp_hidden(), cfg.d_model);
    }
    w.final_norm_gain.assign(cfg.d_model, T(0));
    w.output_head = Matrix<T>(cfg.d_model, cfg.vocab_size);
    return w;
}

// GPT-style init: N(0, 0.02) everywhere, residual-output projections scaled
// by 1/sqrt(2 * n_layers), norm gains at 1. Tensor fill order is fixed; it
// is part of the reproducibility contract.
Weights init_weights(const ModelConfig& cfg);

template <typename To, typename From>
WeightsT<To> convert_weights(const WeightsT<From>& src, const ModelConfig& cfg) {
    WeightsT<To> dst = make_zero_weights<To>(cfg);
    auto dst_list = tensor_list(dst);
    auto src_list = tensor_list(const_cast<WeightsT<From>&>(src));
    if (dst_list.size() != src_list.size()) throw ShapeError("convert_weights: tensor count mismatch");
    for (size_t t = 0; t < dst_list.size(); ++t)
        for (size_t i = 0; i < dst_list[t].data.size(); ++i)
            dst_list[t].data[i] = static_cast<To>(src_list[t].data[i]);
    return dst;
}

}  // namespace sinkcache
