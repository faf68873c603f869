#pragma once

// Inference: iterative mask-refinement decoding seeded by greedy CTC,
// the plain greedy-CTC path, and the token-by-token autoregressive
// baseline. Every decode produces a DecodeTrace with call accounting for
// the latency benchmark.

#include <string>
#include <utility>
#include <vector>

#include "maskctc/ctc.hpp"
#include "maskctc/features.hpp"
#include "maskctc/model.hpp"

namespace maskctc {

struct DecodeConfig {
    double p_thres = 0.999;    // confidence threshold for masking CTC outputs
    int k_iters = 10;          // refinement iteration budget K
    bool num_mask_mode = false;  // one mask per iteration (#mask row)
    int max_ar_len = 200;

    void validate() const {
        if (!num_mask_mode && k_iters < 1) throw ConfigError("k_iters must be >= 1");
        if (p_thres < 0.0 || p_thres > 1.0) throw ConfigError("p_thres must be in [0, 1]");
        if (max_ar_len < 1) throw ConfigError("max_ar_len must be >= 1");
    }
    std::string iterations_label() const { return num_mask_mode ? "#mask" : std::to_string(k_iters); }
};

struct DecodeTrace {
    std::string utt_id;
    std::vector<int> initial_tokens;                   // greedy CTC output
    MaskedSequence masked;                             // after thresholding
    std::vector<std::vector<std::pair<int, int>>> fills;  // (position, token) per iteration
    std::vector<int> final_tokens;
    int decoder_calls = 0;
    int encoder_calls = 0;
    double wall_time = 0.0;  // seconds
    bool truncated = false;  // AR decode hit max_ar_len
};

inline std::pair<int, int> count_calls(const DecodeTrace& t) { return {t.encoder_calls, t.decoder_calls}; }

struct DecodeResult {
    std::vector<int> tokens;
    DecodeTrace trace;
};

// Easy-first refinement: each iteration rescores the whole sequence
// with the bidirectional decoder, commits the C = max(1, ceil(L'/K))
// still-masked positions with the highest best-token probability (C = 1
// in num_mask mode), and repeats until no masks remain. Committed tokens
// are frozen. Ties break toward the lower position; argmax ties toward
// the lower class index.
std::pair<std::vector<int>, std::vector<std::vector<std::pair<int, int>>>> easy_first_fill(
    const BoundModel<float>& bound, const MaskedSequence& masked, const Tensor& enc, const DecodeConfig& cfg);

// Greedy CTC initialization, confidence masking, then easy-first
// refinement. With p_thres = 0 (or nothing below threshold) the greedy
// CTC tokens are returned directly with zero decoder calls. Output
// length always equals the greedy CTC length.
DecodeResult maskctc_decode(const Model& model, const FeatureSeq& x, const DecodeConfig& cfg,
                            const std::string& utt_id = "");

// collapse(argmax(ctc_head(encode(x)))), available for every model type.
DecodeResult ctc_greedy_decode(const Model& model, const FeatureSeq& x, const std::string& utt_id = "");

// Token-by-token causal argmax from <sos> until <eos> or max_ar_len
// (which sets the truncation flag). One decoder call per step.
DecodeResult ar_greedy_decode(const Model& model, const FeatureSeq& x, int max_ar_len,
                              const std::string& utt_id = "");

// Rendering for the .trace.jsonl sink ("_" marks masked slots).
std::string tokens_to_string(const std::vector<int>& tokens, const Vocab& vocab);
std::string masked_to_string(const MaskedSequence& masked, const Vocab& vocab);
std::string trace_to_json(const DecodeTrace& trace, const Vocab& vocab);

}  // namespace maskctc
