#include "maskctc/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "maskctc/errors.hpp"

namespace maskctc {

namespace {

constexpr char kMagic[4] = {'M', 'C', 'T', 'C'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
    char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                 static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
    os.write(b, 4);
}

uint32_t get_u32(std::istream& is, const std::string& path) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (is.gcount() != 4) throw DataError("truncated checkpoint '" + path + "'");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_params(const ParamMap<float>& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    os.write(kMagic, 4);
    put_u32(os, kVersion);
    put_u32(os, static_cast<uint32_t>(params.size()));
    for (const auto& [name, t] : params) {
        put_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        const auto& shape = t.shape();
        put_u32(os, static_cast<uint32_t>(shape.size()));
        for (int d : shape) put_u32(os, static_cast<uint32_t>(d));
        for (float v : t.values()) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32(os, bits);
        }
    }
    if (!os) throw DataError("write failed for '" + path + "'");
}

ParamMap<float> load_params(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open checkpoint '" + path + "'");
    char magic[4];
    is.read(magic, 4);
    if (is.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
        throw DataError("bad checkpoint magic in '" + path + "'");
    uint32_t version = get_u32(is, path);
    if (version != kVersion) throw DataError("unsupported checkpoint version in '" + path + "'");
    uint32_t count = get_u32(is, path);
    ParamMap<float> params;
    for (uint32_t i = 0; i < count; ++i) {
        uint32_t name_len = get_u32(is, path);
        if (name_len > (1u << 16)) throw DataError("implausible tensor name length in '" + path + "'");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (is.gcount() != static_cast<std::streamsize>(name_len)) throw DataError("truncated checkpoint '" + path + "'");
        uint32_t rank = get_u32(is, path);
        if (rank < 1 || rank > 8) throw DataError("implausible tensor rank in '" + path + "'");
        Shape shape(rank);
        int64_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<int>(get_u32(is, path));
            numel *= d;
        }
        if (numel < 1 || numel > (1ll << 30)) throw DataError("implausible tensor size in '" + path + "'");
        std::vector<float> data(static_cast<size_t>(numel));
        for (auto& v : data) {
            uint32_t bits = get_u32(is, path);
            std::memcpy(&v, &bits, 4);
        }
        params.emplace(name, Tensor::param(std::move(shape), std::move(data)));
    }
    return params;
}

void save_model(const Model& model, const std::string& path) {
    save_params(model.params, path);
    nlohmann::json j;
    j["format_version"] = kVersion;
    j["model_type"] = model_type_name(model.type);
    j["feat_dim"] = model.feat_dim;
    j["config"] = {{"enc_layers", model.cfg.enc_layers},   {"dec_layers", model.cfg.dec_layers},
                   {"heads", model.cfg.heads},             {"d_model", model.cfg.d_model},
                   {"d_ff", model.cfg.d_ff},               {"downsample_factor", model.cfg.downsample_factor},
                   {"dropout_rate", model.cfg.dropout_rate}};
    j["vocab"] = model.vocab.table();
    std::ofstream os(path + ".json", std::ios::trunc);
    if (!os) throw DataError("cannot open '" + path + ".json' for writing");
    os << j.dump(2) << "\n";
}

Model load_model(const std::string& path) {
    std::ifstream is(path + ".json");
    if (!is) throw DataError("cannot open model sidecar '" + path + ".json'");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw DataError(std::string("bad model sidecar JSON: ") + e.what());
    }
    Model m;
    m.type = model_type_from_name(j.at("model_type").get<std::string>());
    m.feat_dim = j.at("feat_dim").get<int>();
    const auto& c = j.at("config");
    m.cfg.enc_layers = c.at("enc_layers").get<int>();
    m.cfg.dec_layers = c.at("dec_layers").get<int>();
    m.cfg.heads = c.at("heads").get<int>();
    m.cfg.d_model = c.at("d_model").get<int>();
    m.cfg.d_ff = c.at("d_ff").get<int>();
    m.cfg.downsample_factor = c.at("downsample_factor").get<int>();
    m.cfg.dropout_rate = c.at("dropout_rate").get<float>();
    m.vocab = Vocab(j.at("vocab").get<std::vector<std::string>>());
    m.params = load_params(path);
    return m;
}

ParamMap<float> average_checkpoints(const std::vector<std::string>& paths) {
    if (paths.empty()) throw ContractError("average_checkpoints needs at least one checkpoint");
    ParamMap<float> first = load_params(paths[0]);
    std::map<std::string, std::vector<double>> acc;
    for (const auto& [name, t] : first) {
        auto& a = acc[name];
        a.assign(t.values().begin(), t.values().end());
    }
    for (size_t i = 1; i < paths.size(); ++i) {
        ParamMap<float> p = load_params(paths[i]);
        if (p.size() != first.size())
            throw DataError("checkpoint incompatible: '" + paths[i] + "' has a different tensor set");
        for (const auto& [name, t] : p) {
            auto it = first.find(name);
            if (it == first.end())
                throw DataError("checkpoint incompatible: unexpected tensor '" + name + "' in '" + paths[i] + "'");
            if (it->second.shape() != t.shape())
                throw DataError("checkpoint incompatible: shape mismatch for '" + name + "' in '" + paths[i] + "'");
            auto& a = acc[name];
            const auto& v = t.values();
            for (size_t k = 0; k < v.size(); ++k) a[k] += static_cast<double>(v[k]);
        }
    }
    const double inv = 1.0 / static_cast<double>(paths.size());
    ParamMap<float> out;
    for (const auto& [name, t] : first) {
        const auto& a = acc[name];
        std::vector<float> data(a.size());
        for (size_t k = 0; k < a.size(); ++k) data[k] = static_cast<float>(a[k] * inv);
        out.emplace(name, Tensor::param(t.shape(), std::move(data)));
    }
    return out;
}

std::vector<size_t> select_top_by_score(const std::vector<double>& scores, size_t n) {
    std::vector<size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    if (idx.size() > n) idx.resize(n);
    std::sort(idx.begin(), idx.end());
    return idx;
}

}  // namespace maskctc
