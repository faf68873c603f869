#include "maskctc/corpus.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "maskctc/errors.hpp"

namespace maskctc {

namespace {

// rng stream labels
constexpr uint64_t kProtoStream = 0x70726F74;  // "prot"

}  // namespace

void CorpusConfig::validate() const {
    if (vocab_size < 1) throw ConfigError("vocab_size must be >= 1");
    if (feat_dim < 1) throw ConfigError("feat_dim must be >= 1");
    if (frames_per_token_min < 1 || frames_per_token_max < frames_per_token_min)
        throw ConfigError("frames_per_token range invalid");
    if (silence_prob < 0.0 || silence_prob > 1.0) throw ConfigError("silence_prob must be in [0, 1]");
    if (silence_len_min < 1 || silence_len_max < silence_len_min) throw ConfigError("silence_len range invalid");
    if (noise_sigma < 0.0) throw ConfigError("noise_sigma must be >= 0");
    if (utt_len_min < 1 || utt_len_max < utt_len_min) throw ConfigError("utt_len range invalid");
}

std::vector<float> token_prototype(const CorpusConfig& cfg, int token_id) {
    Rng rng = Rng(cfg.seed).split(kProtoStream).split(static_cast<uint64_t>(token_id));
    std::vector<float> proto(static_cast<size_t>(cfg.feat_dim));
    double norm2 = 0.0;
    for (auto& v : proto) {
        double x = rng.normal();
        v = static_cast<float>(x);
        norm2 += x * x;
    }
    float inv = static_cast<float>(1.0 / std::sqrt(norm2));
    for (auto& v : proto) v *= inv;
    return proto;
}

Utterance gen_utterance(const CorpusConfig& cfg, Rng& rng, const std::string& id) {
    cfg.validate();
    Utterance u;
    u.id = id;
    const int L = rng.uniform_int(cfg.utt_len_min, cfg.utt_len_max);
    u.transcript.reserve(static_cast<size_t>(L));
    for (int l = 0; l < L; ++l)
        u.transcript.push_back(Vocab::kContentStart + rng.uniform_int(0, cfg.vocab_size - 1));

    std::vector<float> frames;
    auto emit_frames = [&](const std::vector<float>* proto, int n) {
        for (int i = 0; i < n; ++i)
            for (int d = 0; d < cfg.feat_dim; ++d)
                frames.push_back(proto ? (*proto)[static_cast<size_t>(d)] : 0.0f);
    };
    for (int l = 0; l < L; ++l) {
        auto proto = token_prototype(cfg, u.transcript[static_cast<size_t>(l)]);
        emit_frames(&proto, rng.uniform_int(cfg.frames_per_token_min, cfg.frames_per_token_max));
        if (l + 1 < L && rng.uniform() < cfg.silence_prob)
            emit_frames(nullptr, rng.uniform_int(cfg.silence_len_min, cfg.silence_len_max));
    }
    if (cfg.noise_sigma > 0.0)
        for (auto& v : frames) v += static_cast<float>(rng.normal(0.0, cfg.noise_sigma));

    u.feats.dim = cfg.feat_dim;
    u.feats.frames = static_cast<int>(frames.size()) / cfg.feat_dim;
    u.feats.data = std::move(frames);
    return u;
}

std::vector<Utterance> gen_split(const CorpusConfig& cfg, uint64_t stream, int count, const std::string& id_prefix) {
    std::vector<Utterance> utts;
    utts.reserve(static_cast<size_t>(count));
    Rng base = Rng(cfg.seed).split(stream);
    for (int i = 0; i < count; ++i) {
        Rng r = base.split(static_cast<uint64_t>(i));
        char id[64];
        std::snprintf(id, sizeof(id), "%s-%05d", id_prefix.c_str(), i);
        utts.push_back(gen_utterance(cfg, r, id));
    }
    return utts;
}

namespace {

constexpr char kMagic[4] = {'M', 'C', 'D', 'S'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

void put_f32(std::ostream& os, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(os, bits);
}

struct Reader {
    std::ifstream in;
    int64_t offset = 0;
    std::string path;

    explicit Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
        if (!in) throw DataError("cannot open dataset file '" + p + "'");
    }
    [[noreturn]] void fail(const std::string& what) const {
        throw DataError("malformed dataset file '" + path + "' at byte " + std::to_string(offset) + ": " + what);
    }
    void read_bytes(char* dst, int64_t n, const char* what) {
        in.read(dst, n);
        if (in.gcount() != n) fail(std::string("truncated while reading ") + what);
        offset += n;
    }
    uint32_t get_u32(const char* what) {
        char b[4];
        read_bytes(b, 4, what);
        return static_cast<uint32_t>(static_cast<unsigned char>(b[0])) |
               (static_cast<uint32_t>(static_cast<unsigned char>(b[1])) << 8) |
               (static_cast<uint32_t>(static_cast<unsigned char>(b[2])) << 16) |
               (static_cast<uint32_t>(static_cast<unsigned char>(b[3])) << 24);
    }
    float get_f32(const char* what) {
        uint32_t bits = get_u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
};

}  // namespace

void write_dataset(const std::vector<Utterance>& utts, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<uint32_t>(utts.size()));
    for (const auto& u : utts) {
        put_u32(os, static_cast<uint32_t>(u.id.size()));
        os.write(u.id.data(), static_cast<std::streamsize>(u.id.size()));
        put_u32(os, static_cast<uint32_t>(u.transcript.size()));
        for (int t : u.transcript) put_u32(os, static_cast<uint32_t>(t));
        put_u32(os, static_cast<uint32_t>(u.feats.frames));
        put_u32(os, static_cast<uint32_t>(u.feats.dim));
        for (float v : u.feats.data) put_f32(os, v);
    }
    if (!os) throw DataError("write failed for '" + path + "'");
}

std::vector<Utterance> read_dataset(const std::string& path) {
    Reader r(path);
    char magic[4];
    r.read_bytes(magic, 4, "magic");
    if (std::memcmp(magic, kMagic, 4) != 0) r.fail("bad magic");
    uint32_t version = r.get_u32("version");
    if (version != kVersion) r.fail("unsupported version " + std::to_string(version));
    uint32_t count = r.get_u32("utterance count");
    std::vector<Utterance> utts;
    utts.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        Utterance u;
        uint32_t id_len = r.get_u32("id length");
        if (id_len > (1u << 20)) r.fail("implausible id length");
        u.id.resize(id_len);
        if (id_len > 0) r.read_bytes(u.id.data(), id_len, "id");
        uint32_t L = r.get_u32("transcript length");
        if (L > (1u << 24)) r.fail("implausible transcript length");
        u.transcript.reserve(L);
        for (uint32_t l = 0; l < L; ++l) u.transcript.push_back(static_cast<int>(r.get_u32("token id")));
        uint32_t frames = r.get_u32("frame count");
        uint32_t dim = r.get_u32("feature dim");
        if (static_cast<uint64_t>(frames) * dim > (1ull << 32)) r.fail("implausible feature size");
        u.feats.frames = static_cast<int>(frames);
        u.feats.dim = static_cast<int>(dim);
        u.feats.data.resize(static_cast<size_t>(frames) * dim);
        for (auto& v : u.feats.data) v = r.get_f32("features");
        utts.push_back(std::move(u));
    }
    return utts;
}

std::string corpus_config_to_json(const CorpusConfig& cfg) {
    nlohmann::json j;
    j["vocab_size"] = cfg.vocab_size;
    j["feat_dim"] = cfg.feat_dim;
    j["frames_per_token_min"] = cfg.frames_per_token_min;
    j["frames_per_token_max"] = cfg.frames_per_token_max;
    j["silence_prob"] = cfg.silence_prob;
    j["silence_len_min"] = cfg.silence_len_min;
    j["silence_len_max"] = cfg.silence_len_max;
    j["noise_sigma"] = cfg.noise_sigma;
    j["utt_len_min"] = cfg.utt_len_min;
    j["utt_len_max"] = cfg.utt_len_max;
    j["seed"] = cfg.seed;
    return j.dump(2);
}

CorpusConfig corpus_config_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("bad corpus config JSON: ") + e.what());
    }
    CorpusConfig cfg;
    cfg.vocab_size = j.value("vocab_size", cfg.vocab_size);
    cfg.feat_dim = j.value("feat_dim", cfg.feat_dim);
    cfg.frames_per_token_min = j.value("frames_per_token_min", cfg.frames_per_token_min);
    cfg.frames_per_token_max = j.value("frames_per_token_max", cfg.frames_per_token_max);
    cfg.silence_prob = j.value("silence_prob", cfg.silence_prob);
    cfg.silence_len_min = j.value("silence_len_min", cfg.silence_len_min);
    cfg.silence_len_max = j.value("silence_len_max", cfg.silence_len_max);
    cfg.noise_sigma = j.value("noise_sigma", cfg.noise_sigma);
    cfg.utt_len_min = j.value("utt_len_min", cfg.utt_len_min);
    cfg.utt_len_max = j.value("utt_len_max", cfg.utt_len_max);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

}  // namespace maskctc
