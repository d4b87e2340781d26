#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "sinkcache/corpus.hpp"
#include "sinkcache/model.hpp"
#include "sinkcache/weights.hpp"

namespace sinkcache {

enum class LrDecay { kCosine, kConstant };

LrDecay lr_decay_from_string(const std::string& s);
std::string to_string(LrDecay d);

struct TrainConfig {
    int steps = 1000;
    int batch = 16;
    int seq_len = 64;  // never above ModelConfig::train_window
    float peak_lr = 3e-4f;
    int warmup_steps = 100;
    LrDecay decay = LrDecay::kCosine;
    float final_lr_frac = 0.1f;  // cosine floor as a fraction of peak
    float beta1 = 0.9f;
    float beta2 = 0.95f;
    float adam_eps = 1e-8f;
    float weight_decay = 0.1f;
    float clip_norm = 1.0f;
    uint64_t seed = 0;

    void validate() const;
};

float lr_at(const TrainConfig& cfg, int step);

struct TrainResult {
    Weights weights;
    // (step, batch mean NLL), recorded every step.
    std::vector<std::pair<int, float>> curve;
};

// Deterministic for fixed (configs, corpus, thread count). Windows start at
// uniformly random corpus offsets; with sink tokens configured each sample is
// prepended with the sink ids before it is split into inputs/targets.
// Throws TrainingDiverged (with the step index) if the loss goes non-finite.
TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                  const TokenStream& corpus, int n_threads = 1);

// Entropy of the empirical unigram distribution, in nats. Any model worth
// its parameters trains below this.
double unigram_entropy(std::span<const int> tokens, int vocab_size);

std::string curve_to_csv(const std::vector<std::pair<int, float>>& curve);

// ---------------------------------------------------------------------------
// Gradient verification: analytic backward vs. 64-bit central finite
// differences through an identical (double-precision) forward path.
// ---------------------------------------------------------------------------
struct GradCheckReport {
    struct TensorStat {
        std::string name;
        double max_rel_err = 0.0;
        double max_abs_err = 0.0;
        int n_checked = 0;
    };
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int n_checked = 0;
    std::vector<TensorStat> tensors;
};

// Samples roughly `sample_frac` of each tensor's entries (always all sink
// embedding entries) and compares against central differences with step h.
GradCheckReport grad_check(const Weights& w, const ModelConfig& cfg,
                           const std::vector<std::vector<int>>& data_windows, double h = 1e-4,
                           double sample_frac = 0.01, uint64_t seed = 0);

// Mean LM loss over the given raw data windows (sink prepend applied),
// evaluated in precision T. This is the function grad_check differentiates.
template <typename T>
T batch_loss(const WeightsT<T>& w, const ModelConfig& cfg,
             const std::vector<std::vector<int>>& data_windows) {
    T total = 0;
    for (const auto& window : data_windows) {
        std::vector<int> full = prepend_sink_tokens(window, cfg);
        LmSample s = make_lm_sample(full, cfg);
        LmObjective<T> obj;
        total += obj.forward(w, cfg, s.inputs, s.targets, s.scored);
    }
    return total / static_cast<T>(data_windows.size());
}

}  // namespace sinkcache
