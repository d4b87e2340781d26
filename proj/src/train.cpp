#include "sinkcache/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <thread>

#include "sinkcache/rng.hpp"

namespace sinkcache {

LrDecay lr_decay_from_string(const std::string& s) {
    if (s == "cosine") return LrDecay::kCosine;
    if (s == "constant") return LrDecay::kConstant;
    throw ConfigError("unknown decay '" + s + "' (want cosine|constant)");
}

std::string to_string(LrDecay d) { return d == LrDecay::kCosine ? "cosine" : "constant"; }

void TrainConfig::validate() const {
    if (steps < 0) throw ConfigError("train config: steps must be >= 0");
    if (batch < 1) throw ConfigError("train config: batch must be >= 1");
    if (seq_len < 2) throw ConfigError("train config: seq_len must be >= 2");
    if (peak_lr <= 0) throw ConfigError("train config: peak_lr must be positive");
    if (warmup_steps < 0) throw ConfigError("train config: warmup_steps must be >= 0");
    if (beta1 <= 0 || beta1 >= 1 || beta2 <= 0 || beta2 >= 1)
        throw ConfigError("train config: betas must lie in (0, 1)");
    if (adam_eps <= 0) throw ConfigError("train config: adam_eps must be positive");
}

float lr_at(const TrainConfig& cfg, int step) {
    if (cfg.warmup_steps > 0 && step < cfg.warmup_steps)
        return cfg.peak_lr * static_cast<float>(step + 1) / static_cast<float>(cfg.warmup_steps);
    if (cfg.decay == LrDecay::kConstant) return cfg.peak_lr;
    const int total = std::max(1, cfg.steps - cfg.warmup_steps);
    const double t = std::min(1.0, static_cast<double>(step - cfg.warmup_steps) / total);
    const double floor = cfg.peak_lr * cfg.final_lr_frac;
    return static_cast<float>(floor + (cfg.peak_lr - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * t)));
}

double unigram_entropy(std::span<const int> tokens, int vocab_size) {
    std::vector<int64_t> counts(vocab_size, 0);
    for (int t : tokens) counts[t]++;
    const double n = static_cast<double>(tokens.size());
    double h = 0.0;
    for (int64_t c : counts) {
        if (c == 0) continue;
        const double p = c / n;
        h -= p * std::log(p);
    }
    return h;
}

std::string curve_to_csv(const std::vector<std::pair<int, float>>& curve) {
    std::ostringstream out;
    out << "step,loss\n";
    for (const auto& [step, loss] : curve) out << step << ',' << loss << '\n';
    return out.str();
}

namespace {

struct AdamState {
    Weights m, v;
};

void adamw_update(Weights& w, Weights& grads, AdamState& st, const TrainConfig& cfg, float lr,
                  int step) {
    const float b1 = cfg.beta1, b2 = cfg.beta2;
    const float bias1 = 1.0f - std::pow(b1, static_cast<float>(step + 1));
    const float bias2 = 1.0f - std::pow(b2, static_cast<float>(step + 1));
    auto ws = tensor_list(w), gs = tensor_list(grads), ms = tensor_list(st.m), vs = tensor_list(st.v);
    for (size_t t = 0; t < ws.size(); ++t) {
        for (size_t i = 0; i < ws[t].data.size(); ++i) {
            const float g = gs[t].data[i];
            ms[t].data[i] = b1 * ms[t].data[i] + (1.0f - b1) * g;
            vs[t].data[i] = b2 * vs[t].data[i] + (1.0f - b2) * g * g;
            const float mhat = ms[t].data[i] / bias1;
            const float vhat = vs[t].data[i] / bias2;
            ws[t].data[i] -=
                lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps) + cfg.weight_decay * ws[t].data[i]);
        }
    }
}

void zero_weights_inplace(Weights& w) {
    for_each_tensor(w, [](TensorRef<float> ref) { std::fill(ref.data.begin(), ref.data.end(), 0.0f); });
}

void add_weights_inplace(Weights& dst, Weights& src) {
    auto ds = tensor_list(dst), ss = tensor_list(src);
    for (size_t t = 0; t < ds.size(); ++t)
        for (size_t i = 0; i < ds[t].data.size(); ++i) ds[t].data[i] += ss[t].data[i];
}

void scale_weights_inplace(Weights& w, float s) {
    for_each_tensor(w, [&](TensorRef<float> ref) {
        for (float& v : ref.data) v *= s;
    });
}

double grad_norm(Weights& g) {
    double sq = 0.0;
    for_each_tensor(g, [&](TensorRef<float> ref) {
        for (float v : ref.data) sq += static_cast<double>(v) * v;
    });
    return std::sqrt(sq);
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const TokenStream& corpus, int n_threads) {
    model_cfg.validate();
    train_cfg.validate();
    if (train_cfg.seq_len > model_cfg.train_window)
        throw ConfigError("train: seq_len exceeds the model's train window");
    if (corpus.vocab_size > model_cfg.data_vocab())
        throw ConfigError("train: corpus alphabet does not fit below the reserved sink ids");
    const int64_t window_len = train_cfg.seq_len + 1 - model_cfg.n_sink_tokens;
    if (window_len < 2) throw ConfigError("train: sink tokens leave no room for data");
    if (static_cast<int64_t>(corpus.tokens.size()) <
        static_cast<int64_t>(train_cfg.batch) * train_cfg.seq_len)
        throw ConfigError("train: corpus shorter than one batch");
    if (static_cast<int64_t>(corpus.tokens.size()) < window_len)
        throw ConfigError("train: corpus shorter than one sample window");

    TrainResult result;
    result.weights = init_weights(model_cfg);
    AdamState st{make_zero_weights<float>(model_cfg), make_zero_weights<float>(model_cfg)};
    Rng data_rng(seed_stream(train_cfg.seed, 17));

    const int batch = train_cfg.batch;
    n_threads = std::max(1, n_threads);
    std::vector<Weights> seq_grads(batch, make_zero_weights<float>(model_cfg));
    std::vector<float> seq_loss(batch, 0.0f);
    Weights grads = make_zero_weights<float>(model_cfg);
    const int64_t max_offset = static_cast<int64_t>(corpus.tokens.size()) - window_len;

    for (int step = 0; step < train_cfg.steps; ++step) {
        std::vector<int64_t> offsets(batch);
        for (int b = 0; b < batch; ++b) offsets[b] = static_cast<int64_t>(data_rng.uniform_int(max_offset + 1));

        // Each sequence accumulates into its own buffer; the reduction below
        // runs in sequence order, so results are identical for any thread
        // count.
        auto run_sequence = [&](int b) {
            zero_weights_inplace(seq_grads[b]);
            std::span<const int> window(corpus.tokens.data() + offsets[b], window_len);
            std::vector<int> full = prepend_sink_tokens(window, model_cfg);
            LmSample sample = make_lm_sample(full, model_cfg);
            LmObjective<float> obj;
            seq_loss[b] = obj.forward(result.weights, model_cfg, sample.inputs, sample.targets,
                                      sample.scored);
            obj.backward(result.weights, model_cfg, seq_grads[b]);
        };
        try {
            if (n_threads <= 1) {
                for (int b = 0; b < batch; ++b) run_sequence(b);
            } else {
                std::vector<std::thread> pool;
                std::vector<std::exception_ptr> errors(n_threads);
                for (int t = 0; t < n_threads; ++t)
                    pool.emplace_back([&, t]() {
                        try {
                            for (int b = t; b < batch; b += n_threads) run_sequence(b);
                        } catch (...) {
                            errors[t] = std::current_exception();
                        }
                    });
                for (auto& th : pool) th.join();
                for (auto& err : errors)
                    if (err) std::rethrow_exception(err);
            }
        } catch (const NonFiniteError& e) {
            // Weights went non-finite in a previous update; surface it as a
            // divergence at this step.
            throw TrainingDiverged(step, "train: " + std::string(e.what()) + " at step " +
                                             std::to_string(step));
        }

        float loss = 0.0f;
        zero_weights_inplace(grads);
        for (int b = 0; b < batch; ++b) {
            loss += seq_loss[b];
            add_weights_inplace(grads, seq_grads[b]);
        }
        loss /= static_cast<float>(batch);
        scale_weights_inplace(grads, 1.0f / static_cast<float>(batch));

        if (!std::isfinite(loss))
            throw TrainingDiverged(step, "train: non-finite loss at step " + std::to_string(step));

        if (train_cfg.clip_norm > 0) {
            const double norm = grad_norm(grads);
            if (norm > train_cfg.clip_norm)
                scale_weights_inplace(grads, static_cast<float>(train_cfg.clip_norm / norm));
        }
        adamw_update(result.weights, grads, st, train_cfg, lr_at(train_cfg, step), step);
        result.curve.emplace_back(step, loss);
    }
    return result;
}

GradCheckReport grad_check(const Weights& w, const ModelConfig& cfg,
                           const std::vector<std::vector<int>>& data_windows, double h,
                           double sample_frac, uint64_t seed) {
    if (data_windows.empty()) throw EmptyInputError("grad_check: empty batch");
    WeightsT<double> wd = convert_weights<double>(w, cfg);

    // Analytic gradient of the mean window loss.
    WeightsT<double> grads = make_zero_weights<double>(cfg);
    for (const auto& window : data_windows) {
        std::vector<int> full = prepend_sink_tokens(window, cfg);
        LmSample s = make_lm_sample(full, cfg);
        LmObjective<double> obj;
        obj.forward(wd, cfg, s.inputs, s.targets, s.scored);
        obj.backward(wd, cfg, grads);
    }
    const double inv_n = 1.0 / data_windows.size();
    for_each_tensor(grads, [&](TensorRef<double> ref) {
        for (double& v : ref.data) v *= inv_n;
    });

    GradCheckReport report;
    Rng rng(seed_stream(seed, 23));
    for_each_tensor(wd, [&](TensorRef<double> ref) {
        GradCheckReport::TensorStat stat;
        stat.name = ref.name;
        const size_t n = ref.data.size();
        size_t n_sample = std::max<size_t>(2, static_cast<size_t>(std::ceil(sample_frac * n)));
        const bool exhaustive = ref.name == "sink_embedding" || n_sample >= n;
        std::vector<size_t> picks;
        if (exhaustive) {
            picks.resize(n);
            for (size_t i = 0; i < n; ++i) picks[i] = i;
        } else {
            for (size_t i = 0; i < n_sample; ++i) picks.push_back(rng.uniform_int(n));
        }
        std::span<double> analytic;
        for_each_tensor(grads, [&](TensorRef<double> g) {
            if (g.name == ref.name) analytic = g.data;
        });
        for (size_t idx : picks) {
            const double saved = ref.data[idx];
            ref.data[idx] = saved + h;
            const double lp = batch_loss<double>(wd, cfg, data_windows);
            ref.data[idx] = saved - h;
            const double lm = batch_loss<double>(wd, cfg, data_windows);
            ref.data[idx] = saved;
            const double fd = (lp - lm) / (2.0 * h);
            const double an = analytic[idx];
            const double abs_err = std::abs(fd - an);
            const double rel_err = abs_err / std::max({std::abs(fd), std::abs(an), 1e-6});
            stat.max_abs_err = std::max(stat.max_abs_err, abs_err);
            stat.max_rel_err = std::max(stat.max_rel_err, rel_err);
            stat.n_checked++;
        }
        report.max_abs_err = std::max(report.max_abs_err, stat.max_abs_err);
        report.max_rel_err = std::max(report.max_rel_err, stat.max_rel_err);
        report.n_checked += stat.n_checked;
        report.tensors.push_back(std::move(stat));
    });
    return report;
}

}  // namespace sinkcache
