#include <cstdio>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "sinkcache/checkpoint.hpp"
#include "test_helpers.hpp"

using namespace sinkcache;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("sinkcache_test_" + std::to_string(::getpid()) + "_" +
                std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Checkpoint sample_checkpoint(int sinks = 1) {
    auto cfg = testutil::tiny_config(PosKind::kRope, AttnVariant::kSoftmax, sinks);
    Checkpoint ckpt;
    ckpt.meta.model = cfg;
    TrainConfig t;
    t.steps = 77;
    t.seed = 5;
    ckpt.meta.train = t;
    ckpt.meta.corpus_name = "toy.tokens";
    ckpt.meta.corpus_checksum = 0xdeadbeef;
    ckpt.meta.threads = 1;
    ckpt.meta.trained_steps = 77;
    ckpt.weights = init_weights(cfg);
    return ckpt;
}

}  // namespace

TEST_CASE("checkpoint round trip is byte identical") {
    TempDir dir;
    const Checkpoint ckpt = sample_checkpoint();
    const std::string p1 = dir.file("a.ckpt"), p2 = dir.file("b.ckpt");
    save_checkpoint(p1, ckpt);
    const Checkpoint loaded = load_checkpoint(p1);
    save_checkpoint(p2, loaded);
    CHECK(slurp(p1) == slurp(p2));

    CHECK(loaded.meta.model.vocab_size == ckpt.meta.model.vocab_size);
    CHECK(loaded.meta.model.n_sink_tokens == 1);
    CHECK(loaded.meta.train.has_value());
    CHECK(loaded.meta.train->steps == 77);
    CHECK(loaded.meta.corpus_name == "toy.tokens");
    auto got = tensor_list(const_cast<Weights&>(loaded.weights));
    auto want = tensor_list(const_cast<Weights&>(ckpt.weights));
    REQUIRE(got.size() == want.size());
    for (size_t t = 0; t < got.size(); ++t) {
        CHECK(got[t].name == want[t].name);
        for (size_t i = 0; i < got[t].data.size(); ++i) CHECK(got[t].data[i] == want[t].data[i]);
    }
}

TEST_CASE("a flipped weight byte is caught by the checksum") {
    TempDir dir;
    const std::string path = dir.file("x.ckpt");
    save_checkpoint(path, sample_checkpoint());
    std::string bytes = slurp(path);
    bytes[bytes.size() - 100] ^= 0x40;  // inside the last weight tensor
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
    CHECK_THROWS_AS(load_checkpoint(path), CorruptCheckpoint);
}

TEST_CASE("truncated and garbage files are rejected") {
    TempDir dir;
    const std::string path = dir.file("y.ckpt");
    save_checkpoint(path, sample_checkpoint());
    std::string bytes = slurp(path);
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(load_checkpoint(path), CorruptCheckpoint);
    std::ofstream(path, std::ios::binary | std::ios::trunc) << "not a checkpoint at all";
    CHECK_THROWS_AS(load_checkpoint(path), CorruptCheckpoint);
    CHECK_THROWS_AS(load_checkpoint(dir.file("missing.ckpt")), IoError);
}

TEST_CASE("inspect reports config and checksum state") {
    TempDir dir;
    const std::string path = dir.file("z.ckpt");
    const Checkpoint ckpt = sample_checkpoint();
    save_checkpoint(path, ckpt);
    const std::string text = inspect_checkpoint(path);
    CHECK(text.find("checksum OK") != std::string::npos);
    CHECK(text.find("vocab_size=" + std::to_string(ckpt.meta.model.vocab_size)) != std::string::npos);
    CHECK(text.find("sink_embedding") != std::string::npos);
    CHECK(text.find("trained_steps=77") != std::string::npos);
}

TEST_CASE("corpus file round trip") {
    TempDir dir;
    const auto stream = make_corpus(CorpusKind::kMarkov, 2000, 9);
    const std::string p1 = dir.file("a.tokens"), p2 = dir.file("b.tokens");
    save_corpus(p1, stream);
    const TokenStream loaded = load_corpus(p1);
    CHECK(loaded.vocab_size == stream.vocab_size);
    CHECK(loaded.tokens == stream.tokens);
    save_corpus(p2, loaded);
    CHECK(slurp(p1) == slurp(p2));
}

TEST_CASE("corpus file validation") {
    TempDir dir;
    TokenStream bad{4, {0, 1, 7}};
    CHECK_THROWS_AS(save_corpus(dir.file("bad.tokens"), bad), IndexError);
    TokenStream ok{4, {0, 1, 3}};
    const std::string path = dir.file("ok.tokens");
    save_corpus(path, ok);
    std::string bytes = slurp(path);
    bytes[8] ^= 0xff;  // version field
    std::ofstream(path, std::ios::binary | std::ios::trunc) << bytes;
    CHECK_THROWS_AS(load_corpus(path), CorruptCheckpoint);
}
