#include "sinkcache/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sinkcache {

namespace {

constexpr char kCkptMagic[8] = {'S', 'I', 'N', 'K', 'C', 'K', 'P', 'T'};
constexpr char kToksMagic[8] = {'S', 'I', 'N', 'K', 'T', 'O', 'K', 'S'};
constexpr uint32_t kCkptVersion = 1;
constexpr uint32_t kToksVersion = 1;

using ordered_json = nlohmann::ordered_json;

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<uint32_t>(v)); }

struct Reader {
    const std::string& buf;
    size_t pos = 0;
    explicit Reader(const std::string& b) : buf(b) {}
    void need(size_t n) const {
        if (pos + n > buf.size()) throw CorruptCheckpoint("file truncated");
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint8_t>(buf[pos]) | (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write '" + path + "'");
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("short write to '" + path + "'");
}

ordered_json model_to_json(const ModelConfig& m) {
    ordered_json j;
    j["n_layers"] = m.n_layers;
    j["n_heads"] = m.n_heads;
    j["d_model"] = m.d_model;
    j["d_head"] = m.d_head;
    j["vocab_size"] = m.vocab_size;
    j["train_window"] = m.train_window;
    j["pos_kind"] = to_string(m.pos_kind);
    j["attn_variant"] = to_string(m.attn_variant);
    j["n_sink_tokens"] = m.n_sink_tokens;
    j["rope_base"] = m.rope_base;
    j["seed"] = m.seed;
    j["tied_embeddings"] = false;
    j["bias"] = false;
    return j;
}

ModelConfig model_from_json(const ordered_json& j) {
    ModelConfig m;
    m.n_layers = j.at("n_layers").get<int>();
    m.n_heads = j.at("n_heads").get<int>();
    m.d_model = j.at("d_model").get<int>();
    m.d_head = j.at("d_head").get<int>();
    m.vocab_size = j.at("vocab_size").get<int>();
    m.train_window = j.at("train_window").get<int>();
    m.pos_kind = pos_kind_from_string(j.at("pos_kind").get<std::string>());
    m.attn_variant = attn_variant_from_string(j.at("attn_variant").get<std::string>());
    m.n_sink_tokens = j.at("n_sink_tokens").get<int>();
    m.rope_base = j.at("rope_base").get<double>();
    m.seed = j.at("seed").get<uint64_t>();
    return m;
}

ordered_json train_to_json(const TrainConfig& t) {
    ordered_json j;
    j["steps"] = t.steps;
    j["batch"] = t.batch;
    j["seq_len"] = t.seq_len;
    j["peak_lr"] = t.peak_lr;
    j["warmup_steps"] = t.warmup_steps;
    j["decay"] = to_string(t.decay);
    j["final_lr_frac"] = t.final_lr_frac;
    j["beta1"] = t.beta1;
    j["beta2"] = t.beta2;
    j["adam_eps"] = t.adam_eps;
    j["weight_decay"] = t.weight_decay;
    j["clip_norm"] = t.clip_norm;
    j["seed"] = t.seed;
    return j;
}

TrainConfig train_from_json(const ordered_json& j) {
    TrainConfig t;
    t.steps = j.at("steps").get<int>();
    t.batch = j.at("batch").get<int>();
    t.seq_len = j.at("seq_len").get<int>();
    t.peak_lr = j.at("peak_lr").get<float>();
    t.warmup_steps = j.at("warmup_steps").get<int>();
    t.decay = lr_decay_from_string(j.at("decay").get<std::string>());
    t.final_lr_frac = j.at("final_lr_frac").get<float>();
    t.beta1 = j.at("beta1").get<float>();
    t.beta2 = j.at("beta2").get<float>();
    t.adam_eps = j.at("adam_eps").get<float>();
    t.weight_decay = j.at("weight_decay").get<float>();
    t.clip_norm = j.at("clip_norm").get<float>();
    t.seed = j.at("seed").get<uint64_t>();
    return t;
}

}  // namespace

uint64_t fnv1a(const void* data, size_t len, uint64_t seed) {
    const auto* p = static_cast<const uint8_t*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

uint64_t corpus_checksum(const TokenStream& stream) {
    uint64_t h = fnv1a(&stream.vocab_size, sizeof(stream.vocab_size));
    for (int t : stream.tokens) {
        const uint16_t v = static_cast<uint16_t>(t);
        h = fnv1a(&v, sizeof(v), h);
    }
    return h;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    ordered_json header;
    header["model"] = model_to_json(ckpt.meta.model);
    header["provenance"] = ordered_json{
        {"train", ckpt.meta.train ? train_to_json(*ckpt.meta.train) : ordered_json(nullptr)},
        {"corpus_name", ckpt.meta.corpus_name},
        {"corpus_checksum", ckpt.meta.corpus_checksum},
        {"threads", ckpt.meta.threads},
        {"trained_steps", ckpt.meta.trained_steps},
    };
    const std::string header_text = header.dump();

    std::string out;
    out.append(kCkptMagic, sizeof(kCkptMagic));
    put_u32(out, kCkptVersion);
    put_u32(out, static_cast<uint32_t>(header_text.size()));
    out += header_text;

    auto tensors = tensor_list(const_cast<Weights&>(ckpt.weights));
    put_u32(out, static_cast<uint32_t>(tensors.size()));
    std::string weight_bytes;
    for (const auto& t : tensors) {
        put_u16(out, static_cast<uint16_t>(t.name.size()));
        out += t.name;
        out.push_back(static_cast<char>(t.shape.size()));
        for (int dim : t.shape) put_u32(out, static_cast<uint32_t>(dim));
        for (float v : t.data) {
            put_f32(out, v);
            put_f32(weight_bytes, v);
        }
    }
    put_u64(out, fnv1a(weight_bytes.data(), weight_bytes.size()));
    write_file(path, out);
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::string buf = read_file(path);
    Reader r(buf);
    if (r.bytes(8) != std::string(kCkptMagic, 8)) throw CorruptCheckpoint("bad checkpoint magic");
    if (r.u32() != kCkptVersion) throw CorruptCheckpoint("unsupported checkpoint version");
    const uint32_t header_len = r.u32();
    ordered_json header;
    try {
        header = ordered_json::parse(r.bytes(header_len));
    } catch (const std::exception& e) {
        throw CorruptCheckpoint(std::string("bad checkpoint header: ") + e.what());
    }

    Checkpoint ckpt;
    ckpt.meta.model = model_from_json(header.at("model"));
    const auto& prov = header.at("provenance");
    if (!prov.at("train").is_null()) ckpt.meta.train = train_from_json(prov.at("train"));
    ckpt.meta.corpus_name = prov.at("corpus_name").get<std::string>();
    ckpt.meta.corpus_checksum = prov.at("corpus_checksum").get<uint64_t>();
    ckpt.meta.threads = prov.at("threads").get<int>();
    ckpt.meta.trained_steps = prov.at("trained_steps").get<int>();
    ckpt.meta.model.validate();

    ckpt.weights = make_zero_weights<float>(ckpt.meta.model);
    auto tensors = tensor_list(ckpt.weights);
    const uint32_t n_tensors = r.u32();
    if (n_tensors != tensors.size()) throw CorruptCheckpoint("tensor count mismatch");
    std::string weight_bytes;
    for (auto& t : tensors) {
        const uint16_t name_len = r.u16();
        const std::string name = r.bytes(name_len);
        if (name != t.name) throw CorruptCheckpoint("unexpected tensor '" + name + "'");
        const int ndim = static_cast<uint8_t>(r.bytes(1)[0]);
        if (ndim != static_cast<int>(t.shape.size())) throw CorruptCheckpoint("tensor rank mismatch");
        for (int dim : t.shape)
            if (r.u32() != static_cast<uint32_t>(dim))
                throw CorruptCheckpoint("tensor shape mismatch for '" + name + "'");
        for (float& v : t.data) {
            v = r.f32();
            put_f32(weight_bytes, v);
        }
    }
    const uint64_t want = r.u64();
    const uint64_t got = fnv1a(weight_bytes.data(), weight_bytes.size());
    if (want != got) throw CorruptCheckpoint("weight checksum mismatch");
    for (const auto& t : tensors)
        for (float v : t.data)
            if (!std::isfinite(v)) throw CorruptCheckpoint("non-finite weight in '" + t.name + "'");
    return ckpt;
}

std::string inspect_checkpoint(const std::string& path) {
    const Checkpoint ckpt = load_checkpoint(path);  // checksum verified here
    std::ostringstream out;
    const ModelConfig& m = ckpt.meta.model;
    out << "model: layers=" << m.n_layers << " heads=" << m.n_heads << " d_model=" << m.d_model
        << " d_head=" << m.d_head << " vocab_size=" << m.vocab_size << " L=" << m.train_window
        << "\n       pos=" << to_string(m.pos_kind) << " attn=" << to_string(m.attn_variant)
        << " sink_tokens=" << m.n_sink_tokens << " rope_base=" << m.rope_base << " seed=" << m.seed
        << "\n";
    out << "provenance: corpus=" << (ckpt.meta.corpus_name.empty() ? "-" : ckpt.meta.corpus_name)
        << " corpus_checksum=" << ckpt.meta.corpus_checksum << " threads=" << ckpt.meta.threads
        << " trained_steps=" << ckpt.meta.trained_steps << "\n";
    if (ckpt.meta.train) {
        const TrainConfig& t = *ckpt.meta.train;
        out << "train: steps=" << t.steps << " batch=" << t.batch << " seq_len=" << t.seq_len
            << " peak_lr=" << t.peak_lr << " warmup=" << t.warmup_steps
            << " decay=" << to_string(t.decay) << " wd=" << t.weight_decay << " seed=" << t.seed
            << "\n";
    }
    size_t total = 0;
    for_each_tensor(const_cast<Weights&>(ckpt.weights), [&](TensorRef<float> t) {
        out << "tensor " << t.name << " [";
        for (size_t i = 0; i < t.shape.size(); ++i) out << (i ? "x" : "") << t.shape[i];
        out << "] " << t.data.size() << " params\n";
        total += t.data.size();
    });
    out << "total params: " << total << "\n";
    out << "checksum OK\n";
    return out.str();
}

void save_corpus(const std::string& path, const TokenStream& stream) {
    for (int t : stream.tokens)
        if (t < 0 || t >= stream.vocab_size) throw IndexError("save_corpus: token out of range");
    if (stream.vocab_size > 65536) throw ConfigError("save_corpus: vocab exceeds 16-bit tokens");
    std::string out;
    out.append(kToksMagic, sizeof(kToksMagic));
    put_u32(out, kToksVersion);
    put_u32(out, static_cast<uint32_t>(stream.vocab_size));
    put_u64(out, static_cast<uint64_t>(stream.tokens.size()));
    for (int t : stream.tokens) put_u16(out, static_cast<uint16_t>(t));
    write_file(path, out);
}

TokenStream load_corpus(const std::string& path) {
    const std::string buf = read_file(path);
    Reader r(buf);
    if (r.bytes(8) != std::string(kToksMagic, 8)) throw CorruptCheckpoint("bad corpus magic");
    if (r.u32() != kToksVersion) throw CorruptCheckpoint("unsupported corpus version");
    TokenStream stream;
    stream.vocab_size = static_cast<int>(r.u32());
    const uint64_t count = r.u64();
    stream.tokens.reserve(count);
    for (uint64_t i = 0; i < count; ++i) {
        const int t = r.u16();
        if (t >= stream.vocab_size) throw CorruptCheckpoint("corpus token out of range");
        stream.tokens.push_back(t);
    }
    return stream;
}

}  // namespace sinkcache
