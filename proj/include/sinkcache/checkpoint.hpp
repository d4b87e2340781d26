#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "sinkcache/config.hpp"
#include "sinkcache/corpus.hpp"
#include "sinkcache/train.hpp"
#include "sinkcache/weights.hpp"

namespace sinkcache {

// Everything written next to the weights so a checkpoint is self-describing:
// model config, the exact training recipe, and the run's reproducibility
// inputs. No timestamps or absolute paths; saving the same state twice must
// produce identical bytes.
struct CheckpointMeta {
    ModelConfig model;
    std::optional<TrainConfig> train;
    std::string corpus_name;      // basename only
    uint64_t corpus_checksum = 0; // FNV-1a over the corpus token bytes
    int threads = 1;
    int trained_steps = 0;
};

struct Checkpoint {
    CheckpointMeta meta;
    Weights weights;
};

// Binary layout: magic "SINKCKPT", format version, length-prefixed JSON
// header, named tensor records (little-endian f32), trailing 64-bit FNV-1a
// checksum of all weight bytes.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Human-readable summary: config, provenance, tensor shapes, checksum state.
std::string inspect_checkpoint(const std::string& path);

// Corpus container: magic "SINKTOKS", version, vocab size, token count,
// little-endian u16 tokens.
void save_corpus(const std::string& path, const TokenStream& stream);
TokenStream load_corpus(const std::string& path);

uint64_t fnv1a(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull);
uint64_t corpus_checksum(const TokenStream& stream);

}  // namespace sinkcache
