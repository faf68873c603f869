#include "maskctc/decoding.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include <json.hpp>

#include "maskctc/errors.hpp"

namespace maskctc {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

// argmax over decoder classes, ties to the lowest index
int best_class(const float* row, int classes) {
    int best = 0;
    for (int c = 1; c < classes; ++c)
        if (row[c] > row[best]) best = c;
    return best;
}

}  // namespace

std::pair<std::vector<int>, std::vector<std::vector<std::pair<int, int>>>> easy_first_fill(
    const BoundModel<float>& bound, const MaskedSequence& masked, const Tensor& enc, const DecodeConfig& cfg) {
    cfg.validate();
    if (masked.masked_positions.empty()) throw ContractError("easy_first_fill needs at least one masked position");
    const int L = masked.original_length;
    const int C = cfg.num_mask_mode
                      ? 1
                      : std::max(1, static_cast<int>(std::ceil(static_cast<double>(L) / cfg.k_iters)));
    std::vector<int> tokens = masked.tokens;
    std::vector<int> remaining = masked.masked_positions;
    std::vector<std::vector<std::pair<int, int>>> fills;

    const int classes = bound.vocab.dec_classes();
    while (!remaining.empty()) {
        auto logp = decode_step(bound, tokens, enc, /*causal=*/false);  // [L, classes]
        const float* v = logp.values().data();
        // best token and its log-prob per still-masked position
        std::vector<std::pair<double, int>> scored;  // (-logp, position) for a stable ascending sort
        std::vector<int> best_tok(static_cast<size_t>(L), -1);
        for (int pos : remaining) {
            const float* row = v + static_cast<int64_t>(pos) * classes;
            int c = best_class(row, classes);
            best_tok[static_cast<size_t>(pos)] = Vocab::token_of_dec_class(c);
            scored.emplace_back(-static_cast<double>(row[c]), pos);
        }
        std::sort(scored.begin(), scored.end());
        const int commit = std::min<int>(C, static_cast<int>(scored.size()));
        std::vector<std::pair<int, int>> fill;
        fill.reserve(static_cast<size_t>(commit));
        std::vector<char> committed(static_cast<size_t>(L), 0);
        for (int i = 0; i < commit; ++i) {
            int pos = scored[static_cast<size_t>(i)].second;
            int tok = best_tok[static_cast<size_t>(pos)];
            tokens[static_cast<size_t>(pos)] = tok;
            committed[static_cast<size_t>(pos)] = 1;
            fill.emplace_back(pos, tok);
        }
        std::sort(fill.begin(), fill.end());
        fills.push_back(std::move(fill));
        // committed positions are frozen by position, independent of the
        // token value they received
        std::vector<int> next;
        next.reserve(remaining.size() - static_cast<size_t>(commit));
        for (int pos : remaining)
            if (!committed[static_cast<size_t>(pos)]) next.push_back(pos);
        remaining = std::move(next);
    }
    return {std::move(tokens), std::move(fills)};
}

DecodeResult maskctc_decode(const Model& model, const FeatureSeq& x, const DecodeConfig& cfg,
                            const std::string& utt_id) {
    cfg.validate();
    if (!has_decoder(model.type))
        throw ContractError("mask-refinement decoding needs a model with a decoder, got type " +
                            std::string(model_type_name(model.type)));
    auto t0 = Clock::now();
    DecodeResult res;
    res.trace.utt_id = utt_id;
    auto bound = model.bind<float>();
    auto enc = encode(bound, x);
    res.trace.encoder_calls = 1;
    auto tc = ctc_greedy(ctc_head(bound, enc));
    res.trace.initial_tokens = tc.tokens;
    res.trace.masked = mask_by_confidence(tc, cfg.p_thres);
    if (res.trace.masked.masked_positions.empty()) {
        res.tokens = tc.tokens;
    } else {
        auto [tokens, fills] = easy_first_fill(bound, res.trace.masked, enc, cfg);
        res.tokens = std::move(tokens);
        res.trace.fills = std::move(fills);
        res.trace.decoder_calls = static_cast<int>(res.trace.fills.size());
    }
    res.trace.final_tokens = res.tokens;
    res.trace.wall_time = seconds_since(t0);
    return res;
}

DecodeResult ctc_greedy_decode(const Model& model, const FeatureSeq& x, const std::string& utt_id) {
    auto t0 = Clock::now();
    DecodeResult res;
    res.trace.utt_id = utt_id;
    auto bound = model.bind<float>();
    auto enc = encode(bound, x);
    res.trace.encoder_calls = 1;
    auto tc = ctc_greedy(ctc_head(bound, enc));
    res.tokens = tc.tokens;
    res.trace.initial_tokens = tc.tokens;
    res.trace.masked.tokens = tc.tokens;
    res.trace.masked.original_length = tc.length();
    res.trace.final_tokens = res.tokens;
    res.trace.wall_time = seconds_since(t0);
    return res;
}

DecodeResult ar_greedy_decode(const Model& model, const FeatureSeq& x, int max_ar_len, const std::string& utt_id) {
    if (model.type != ModelType::ar_joint)
        throw ContractError("autoregressive decoding needs an ar_joint model, got type " +
                            std::string(model_type_name(model.type)));
    if (max_ar_len < 1) throw ConfigError("max_ar_len must be >= 1");
    auto t0 = Clock::now();
    DecodeResult res;
    res.trace.utt_id = utt_id;
    auto bound = model.bind<float>();
    auto enc = encode(bound, x);
    res.trace.encoder_calls = 1;

    const int classes = bound.vocab.dec_classes();
    std::vector<int> seq = {Vocab::kSos};
    while (true) {
        auto logp = decode_step(bound, seq, enc, /*causal=*/true);
        res.trace.decoder_calls += 1;
        const float* row = logp.values().data() + (logp.numel() - classes);
        int tok = Vocab::token_of_dec_class(best_class(row, classes));
        if (tok == Vocab::kEos) break;
        res.trace.fills.push_back({{static_cast<int>(res.tokens.size()), tok}});
        res.tokens.push_back(tok);
        seq.push_back(tok);
        if (static_cast<int>(res.tokens.size()) >= max_ar_len) {
            res.trace.truncated = true;
            break;
        }
    }
    res.trace.final_tokens = res.tokens;
    res.trace.wall_time = seconds_since(t0);
    return res;
}

std::string tokens_to_string(const std::vector<int>& tokens, const Vocab& vocab) {
    std::string out;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += vocab.str(tokens[i]);
    }
    return out;
}

std::string masked_to_string(const MaskedSequence& masked, const Vocab& vocab) {
    std::string out;
    size_t next_masked = 0;
    for (size_t i = 0; i < masked.tokens.size(); ++i) {
        if (i) out += ' ';
        if (next_masked < masked.masked_positions.size() &&
            masked.masked_positions[next_masked] == static_cast<int>(i)) {
            out += '_';
            ++next_masked;
        } else {
            out += vocab.str(masked.tokens[i]);
        }
    }
    return out;
}

std::string trace_to_json(const DecodeTrace& trace, const Vocab& vocab) {
    nlohmann::json j;
    j["id"] = trace.utt_id;
    j["initial_ctc"] = tokens_to_string(trace.initial_tokens, vocab);
    j["masked_string"] = masked_to_string(trace.masked, vocab);
    nlohmann::json fills = nlohmann::json::array();
    for (const auto& iter : trace.fills) {
        nlohmann::json f = nlohmann::json::array();
        for (const auto& [pos, tok] : iter) f.push_back({{"position", pos}, {"token", vocab.str(tok)}});
        fills.push_back(std::move(f));
    }
    j["fills"] = std::move(fills);
    j["final"] = tokens_to_string(trace.final_tokens, vocab);
    j["decoder_calls"] = trace.decoder_calls;
    j["encoder_calls"] = trace.encoder_calls;
    j["wall_time"] = trace.wall_time;
    j["truncated"] = trace.truncated;
    return j.dump();
}

}  // namespace maskctc
