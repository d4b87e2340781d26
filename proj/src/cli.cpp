#include "sinkcache/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "sinkcache/checkpoint.hpp"
#include "sinkcache/corpus.hpp"
#include "sinkcache/evalsuite.hpp"
#include "sinkcache/model.hpp"
#include "sinkcache/train.hpp"

namespace sinkcache {

namespace {

constexpr const char* kToolVersion = "1.0.0";

uint64_t default_seed() {
    if (const char* env = std::getenv("SINKCACHE_SEED")) {
        try {
            return std::stoull(env);
        } catch (const std::exception&) {
            throw ConfigError("SINKCACHE_SEED is not an integer");
        }
    }
    return 12345;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
    if (!out) throw IoError("short write to '" + path + "'");
}

// Machine-readable record of how an output was produced. Deliberately free
// of timestamps so reruns are byte-identical.
void write_provenance(const std::string& out_path, const std::vector<std::string>& argv,
                      uint64_t seed, int threads) {
    nlohmann::ordered_json j;
    j["tool"] = "sinkcache";
    j["version"] = kToolVersion;
    j["checkpoint_format"] = 1;
    j["corpus_format"] = 1;
    j["argv"] = argv;
    j["seed"] = seed;
    j["threads"] = threads;
    write_text(out_path + ".prov.json", j.dump(2) + "\n");
}

std::vector<int> parse_int_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stoi(item));
    }
    if (out.empty()) throw ConfigError("empty integer list '" + text + "'");
    return out;
}

std::span<const int> stream_slice(const TokenStream& corpus, int64_t start, int64_t count) {
    if (start < 0 || start >= static_cast<int64_t>(corpus.tokens.size()))
        throw IndexError("stream start out of range");
    int64_t n = count > 0 ? count : static_cast<int64_t>(corpus.tokens.size()) - start;
    if (start + n > static_cast<int64_t>(corpus.tokens.size()))
        throw IndexError("stream slice out of range");
    return {corpus.tokens.data() + start, static_cast<size_t>(n)};
}

struct EvalArgs {
    std::string ckpt_path;
    std::string corpus_path;
    int64_t start = 0;
    int64_t count = 0;  // 0 = to the end
    int64_t skip = -1;  // -1 = model train window
};

void add_eval_options(CLI::App* cmd, EvalArgs& args) {
    cmd->add_option("--ckpt", args.ckpt_path, "checkpoint file")->required();
    cmd->add_option("--corpus", args.corpus_path, "token stream file")->required();
    cmd->add_option("--start", args.start, "stream start offset (default 0)");
    cmd->add_option("--tokens", args.count, "stream length (default: to the end)");
    cmd->add_option("--skip", args.skip,
                    "positions to skip before scoring (default: the model's train window)");
}

int64_t effective_skip(const EvalArgs& args, const ModelConfig& cfg) {
    return args.skip >= 0 ? args.skip : cfg.train_window;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"tiny streaming-attention language model workbench"};
    app.require_subcommand(1);
    int threads = 1;
    app.add_option("--threads", threads, "worker pool cap (recorded in provenance)")
        ->check(CLI::PositiveNumber);

    std::vector<std::string> argv_copy(argv, argv + argc);

    // gen-corpus ------------------------------------------------------------
    auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic token stream");
    std::string gen_kind = "markov", gen_out;
    int64_t gen_size = 1000000;
    uint64_t gen_seed = 0;
    bool gen_seed_set = false;
    gen->add_option("--kind", gen_kind, "markov | copy | needle");
    gen->add_option("--size", gen_size, "token count")->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed, "generator seed")->each([&](const std::string&) {
        gen_seed_set = true;
    });
    gen->add_option("--out", gen_out, "output corpus file")->required();

    // train ----------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "pretrain a model on a corpus");
    std::string tr_corpus, tr_out, tr_curve;
    std::string tr_pos = "rope", tr_attn = "softmax", tr_decay = "cosine";
    ModelConfig tr_model;
    TrainConfig tr_cfg;
    uint64_t tr_seed = 0;
    bool tr_seed_set = false;
    tr->add_option("--corpus", tr_corpus, "training corpus")->required();
    tr->add_option("--out", tr_out, "checkpoint output")->required();
    tr->add_option("--curve", tr_curve, "loss curve CSV output");
    tr->add_option("--steps", tr_cfg.steps, "optimizer steps");
    tr->add_option("--batch", tr_cfg.batch, "sequences per step");
    tr->add_option("--seq-len", tr_cfg.seq_len, "training sequence length");
    tr->add_option("--layers", tr_model.n_layers, "decoder blocks");
    tr->add_option("--heads", tr_model.n_heads, "attention heads");
    tr->add_option("--d-model", tr_model.d_model, "model width");
    tr->add_option("--window", tr_model.train_window, "train window L (default: seq-len)")
        ->default_val(0);
    tr->add_option("--pos", tr_pos, "rope | alibi");
    tr->add_option("--attn", tr_attn, "softmax | softmax1");
    tr->add_option("--sink-tokens", tr_model.n_sink_tokens, "learnable sink tokens (0-2)");
    tr->add_option("--rope-base", tr_model.rope_base, "rotary base");
    tr->add_option("--lr", tr_cfg.peak_lr, "peak learning rate");
    tr->add_option("--warmup", tr_cfg.warmup_steps, "warmup steps");
    tr->add_option("--decay", tr_decay, "cosine | constant");
    tr->add_option("--wd", tr_cfg.weight_decay, "decoupled weight decay");
    tr->add_option("--clip", tr_cfg.clip_norm, "gradient clip norm");
    tr->add_option("--seed", tr_seed, "training + init seed")->each([&](const std::string&) {
        tr_seed_set = true;
    });

    // ppl ------------------------------------------------------------------
    auto* ppl = app.add_subcommand("ppl", "streaming perplexity under a cache policy");
    EvalArgs ppl_args;
    std::string ppl_policy = "dense", ppl_out, ppl_dump_cache;
    add_eval_options(ppl, ppl_args);
    ppl->add_option("--policy", ppl_policy, "dense | window:y | recompute:L | sink:x+y");
    ppl->add_option("--out", ppl_out, "per-token NLL CSV output")->required();
    ppl->add_option("--dump-cache", ppl_dump_cache, "write final cache state (debug)");

    // ablate-sinks ----------------------------------------------------------
    auto* abl = app.add_subcommand("ablate-sinks", "sweep sink count at fixed capacity");
    EvalArgs abl_args;
    std::string abl_out, abl_xs = "0,1,2,4,8";
    int abl_capacity = 64;
    add_eval_options(abl, abl_args);
    abl->add_option("--capacity", abl_capacity, "total cache capacity")->required();
    abl->add_option("--xs", abl_xs, "comma-separated sink counts");
    abl->add_option("--out", abl_out, "CSV output")->required();

    // sweep-cache ------------------------------------------------------------
    auto* swc = app.add_subcommand("sweep-cache", "sweep cache size at fixed sink count");
    EvalArgs swc_args;
    std::string swc_out, swc_ys;
    int swc_x = 4;
    add_eval_options(swc, swc_args);
    swc->add_option("--x", swc_x, "sink count");
    swc->add_option("--ys", swc_ys, "comma-separated recent sizes")->required();
    swc->add_option("--out", swc_out, "CSV output")->required();

    // streameval -------------------------------------------------------------
    auto* sev = app.add_subcommand("streameval", "line-keyed retrieval accuracy");
    std::string sev_ckpt, sev_policy = "sink:4+252", sev_out;
    int sev_queries = 100, sev_q = 10, sev_d = 20;
    uint64_t sev_seed = 0;
    bool sev_seed_set = false;
    sev->add_option("--ckpt", sev_ckpt, "checkpoint file")->required();
    sev->add_option("--policy", sev_policy, "cache policy");
    sev->add_option("--queries", sev_queries, "queries per sample");
    sev->add_option("--q", sev_q, "lines between queries");
    sev->add_option("--d", sev_d, "answer distance in lines");
    sev->add_option("--seed", sev_seed, "sample seed")->each([&](const std::string&) {
        sev_seed_set = true;
    });
    sev->add_option("--out", sev_out, "accuracy CSV output")->required();

    // attn-stats -------------------------------------------------------------
    auto* ast = app.add_subcommand("attn-stats", "attention mass on first/sink tokens");
    std::string ast_ckpt, ast_corpus, ast_out;
    int ast_len = 16, ast_sentences = 256;
    uint64_t ast_seed = 0;
    bool ast_seed_set = false;
    ast->add_option("--ckpt", ast_ckpt, "checkpoint file")->required();
    ast->add_option("--corpus", ast_corpus, "corpus file for sentences")->required();
    ast->add_option("--len", ast_len, "sentence length");
    ast->add_option("--sentences", ast_sentences, "sentences to average");
    ast->add_option("--seed", ast_seed, "sentence sampling seed")->each([&](const std::string&) {
        ast_seed_set = true;
    });
    ast->add_option("--out", ast_out, "CSV output")->required();

    // bench ------------------------------------------------------------------
    auto* ben = app.add_subcommand("bench", "per-token decode latency and memory");
    std::string ben_ckpt, ben_kind = "sink", ben_sizes = "256,512,1024", ben_out;
    int ben_x = 4;
    int64_t ben_tokens = 0;
    uint64_t ben_seed = 0;
    bool ben_seed_set = false;
    ben->add_option("--ckpt", ben_ckpt, "checkpoint file")->required();
    ben->add_option("--kind", ben_kind, "sink | window | recompute");
    ben->add_option("--x", ben_x, "sink count for sink policies");
    ben->add_option("--sizes", ben_sizes, "comma-separated cache sizes");
    ben->add_option("--tokens-per-point", ben_tokens,
                    "tokens decoded per point (default: 10x cache size)");
    ben->add_option("--seed", ben_seed, "stream seed")->each([&](const std::string&) {
        ben_seed_set = true;
    });
    ben->add_option("--out", ben_out, "CSV output")->required();

    // gradcheck ----------------------------------------------------------------
    auto* grc = app.add_subcommand("gradcheck", "analytic vs finite-difference gradients");
    std::string grc_ckpt, grc_corpus;
    int grc_batch = 2, grc_len = 16;
    double grc_frac = 0.01;
    uint64_t grc_seed = 0;
    bool grc_seed_set = false;
    grc->add_option("--ckpt", grc_ckpt, "checkpoint file")->required();
    grc->add_option("--corpus", grc_corpus, "corpus file for batch windows")->required();
    grc->add_option("--batch", grc_batch, "windows to check");
    grc->add_option("--len", grc_len, "window length");
    grc->add_option("--sample-frac", grc_frac, "fraction of parameters to probe");
    grc->add_option("--seed", grc_seed, "sampling seed")->each([&](const std::string&) {
        grc_seed_set = true;
    });

    // inspect ---------------------------------------------------------------
    auto* ins = app.add_subcommand("inspect", "print checkpoint summary");
    std::string ins_ckpt;
    ins->add_option("ckpt", ins_ckpt, "checkpoint file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        std::cerr << app.help() << "\n";
        return 2;
    }

    try {
        if (*gen) {
            if (!gen_seed_set) gen_seed = default_seed();
            const TokenStream stream = make_corpus(corpus_kind_from_string(gen_kind), gen_size, gen_seed);
            save_corpus(gen_out, stream);
            write_provenance(gen_out, argv_copy, gen_seed, threads);
            std::cout << "wrote " << stream.tokens.size() << " tokens (vocab " << stream.vocab_size
                      << ") to " << gen_out << "\n";
        } else if (*tr) {
            if (!tr_seed_set) tr_seed = default_seed();
            tr_cfg.seed = tr_seed;
            tr_cfg.decay = lr_decay_from_string(tr_decay);
            const TokenStream corpus = load_corpus(tr_corpus);
            if (tr_model.train_window == 0) tr_model.train_window = tr_cfg.seq_len;
            tr_model.d_head = tr_model.d_model / tr_model.n_heads;
            tr_model.pos_kind = pos_kind_from_string(tr_pos);
            tr_model.attn_variant = attn_variant_from_string(tr_attn);
            tr_model.vocab_size = corpus.vocab_size + tr_model.n_sink_tokens;
            tr_model.seed = tr_seed;
            tr_model.validate();

            const TrainResult result = train(tr_model, tr_cfg, corpus, threads);
            Checkpoint ckpt;
            ckpt.meta.model = tr_model;
            ckpt.meta.train = tr_cfg;
            ckpt.meta.corpus_name = std::filesystem::path(tr_corpus).filename().string();
            ckpt.meta.corpus_checksum = corpus_checksum(corpus);
            ckpt.meta.threads = threads;
            ckpt.meta.trained_steps = tr_cfg.steps;
            ckpt.weights = result.weights;
            save_checkpoint(tr_out, ckpt);
            write_provenance(tr_out, argv_copy, tr_seed, threads);
            if (!tr_curve.empty()) {
                write_text(tr_curve, curve_to_csv(result.curve));
                write_provenance(tr_curve, argv_copy, tr_seed, threads);
            }
            std::cout << "trained " << tr_cfg.steps << " steps";
            if (!result.curve.empty()) std::cout << ", final loss " << result.curve.back().second;
            std::cout << ", checkpoint " << tr_out << "\n";
        } else if (*ppl) {
            const Checkpoint ckpt = load_checkpoint(ppl_args.ckpt_path);
            const TokenStream corpus = load_corpus(ppl_args.corpus_path);
            const CachePolicy policy = CachePolicy::parse(ppl_policy);
            const auto stream = stream_slice(corpus, ppl_args.start, ppl_args.count);
            const StreamReport report = stream_perplexity(
                ckpt.weights, ckpt.meta.model, policy, stream, effective_skip(ppl_args, ckpt.meta.model));
            write_text(ppl_out, report_to_csv(report));
            write_provenance(ppl_out, argv_copy, ckpt.meta.model.seed, threads);
            if (!ppl_dump_cache.empty() && policy.uses_incremental_decode()) {
                // Replays the stream to capture the final cache contents.
                DecoderSession session(&ckpt.weights, ckpt.meta.model, policy);
                for (int j = 0; j < ckpt.meta.model.n_sink_tokens; ++j)
                    session.step(ckpt.meta.model.sink_token_id(j));
                for (int t : stream) session.step(t);
                write_text(ppl_dump_cache, session.cache().debug_dump());
            }
            std::cout << "policy " << policy.to_string() << ": perplexity "
                      << format_float(report.perplexity) << " over " << report.tokens_scored
                      << " tokens\n";
        } else if (*abl) {
            const Checkpoint ckpt = load_checkpoint(abl_args.ckpt_path);
            const TokenStream corpus = load_corpus(abl_args.corpus_path);
            const auto stream = stream_slice(corpus, abl_args.start, abl_args.count);
            const std::vector<int> xs = parse_int_list(abl_xs);
            const SweepResult sweep =
                sink_ablation(ckpt.weights, ckpt.meta.model, xs, abl_capacity, stream,
                              effective_skip(abl_args, ckpt.meta.model));
            write_text(abl_out, sweep_to_csv(sweep));
            write_provenance(abl_out, argv_copy, ckpt.meta.model.seed, threads);
            std::cout << sweep_to_csv(sweep);
            if (sweep.non_monotone) std::cout << "note: perplexity is not monotone across this sweep\n";
        } else if (*swc) {
            const Checkpoint ckpt = load_checkpoint(swc_args.ckpt_path);
            const TokenStream corpus = load_corpus(swc_args.corpus_path);
            const auto stream = stream_slice(corpus, swc_args.start, swc_args.count);
            const std::vector<int> ys = parse_int_list(swc_ys);
            const SweepResult sweep = cache_size_sweep(ckpt.weights, ckpt.meta.model, swc_x, ys,
                                                       stream, effective_skip(swc_args, ckpt.meta.model));
            write_text(swc_out, sweep_to_csv(sweep));
            write_provenance(swc_out, argv_copy, ckpt.meta.model.seed, threads);
            std::cout << sweep_to_csv(sweep);
            if (sweep.non_monotone) std::cout << "note: perplexity is not monotone across this sweep\n";
        } else if (*sev) {
            if (!sev_seed_set) sev_seed = default_seed();
            const Checkpoint ckpt = load_checkpoint(sev_ckpt);
            const StreamEvalSample sample = gen_streameval(sev_queries, sev_q, sev_d, sev_seed);
            const CachePolicy policy = CachePolicy::parse(sev_policy);
            const double acc = score_streameval(ckpt.weights, ckpt.meta.model, policy, sample);
            std::ostringstream csv;
            csv << "policy,queries,q,d,seed,accuracy\n"
                << policy.to_string() << ',' << sev_queries << ',' << sev_q << ',' << sev_d << ','
                << sev_seed << ',' << format_float(acc) << '\n';
            write_text(sev_out, csv.str());
            write_provenance(sev_out, argv_copy, sev_seed, threads);
            std::cout << "accuracy " << format_float(acc) << " (" << sample.queries.size()
                      << " queries)\n";
        } else if (*ast) {
            if (!ast_seed_set) ast_seed = default_seed();
            const Checkpoint ckpt = load_checkpoint(ast_ckpt);
            const TokenStream corpus = load_corpus(ast_corpus);
            const SinkFractionProfile profile =
                sink_fraction(ckpt.weights, ckpt.meta.model, corpus, ast_len, ast_sentences, ast_seed);
            write_text(ast_out, sink_fraction_to_csv(profile));
            write_provenance(ast_out, argv_copy, ast_seed, threads);
            std::cout << sink_fraction_to_csv(profile);
        } else if (*ben) {
            if (!ben_seed_set) ben_seed = default_seed();
            const Checkpoint ckpt = load_checkpoint(ben_ckpt);
            const std::vector<int> sizes = parse_int_list(ben_sizes);
            CachePolicy::Kind kind;
            if (ben_kind == "sink") kind = CachePolicy::Kind::kSinkStreaming;
            else if (ben_kind == "window") kind = CachePolicy::Kind::kWindow;
            else if (ben_kind == "recompute") kind = CachePolicy::Kind::kSlidingRecompute;
            else throw ConfigError("bench kind must be sink | window | recompute");
            int64_t tokens = ben_tokens;
            if (tokens <= 0) tokens = 10LL * *std::max_element(sizes.begin(), sizes.end());
            const auto rows =
                bench_decode(ckpt.weights, ckpt.meta.model, kind, ben_x, sizes, tokens, ben_seed);
            write_text(ben_out, bench_to_csv(rows));
            write_provenance(ben_out, argv_copy, ben_seed, threads);
            std::cout << bench_to_csv(rows);
        } else if (*grc) {
            if (!grc_seed_set) grc_seed = default_seed();
            const Checkpoint ckpt = load_checkpoint(grc_ckpt);
            const TokenStream corpus = load_corpus(grc_corpus);
            Rng rng(seed_stream(grc_seed, 41));
            std::vector<std::vector<int>> windows;
            for (int b = 0; b < grc_batch; ++b) {
                const int64_t off =
                    static_cast<int64_t>(rng.uniform_int(corpus.tokens.size() - grc_len + 1));
                windows.emplace_back(corpus.tokens.begin() + off, corpus.tokens.begin() + off + grc_len);
            }
            const GradCheckReport report =
                grad_check(ckpt.weights, ckpt.meta.model, windows, 1e-4, grc_frac, grc_seed);
            std::cout << "checked " << report.n_checked << " parameters: max rel err "
                      << format_float(report.max_rel_err) << ", max abs err "
                      << format_float(report.max_abs_err) << "\n";
            for (const auto& t : report.tensors)
                std::cout << "  " << t.name << ": rel " << format_float(t.max_rel_err) << " abs "
                          << format_float(t.max_abs_err) << " (" << t.n_checked << " probed)\n";
        } else if (*ins) {
            std::cout << inspect_checkpoint(ins_ckpt);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace sinkcache
