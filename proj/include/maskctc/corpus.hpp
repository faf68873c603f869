#pragma once

// Synthetic pseudo-speech corpus. Each content token owns a fixed
// unit-norm prototype vector derived from (seed, token id); an utterance
// renders its tokens at a random frame rate, optionally separated by
// zero-vector silence, with i.i.d. Gaussian noise on top. This
// manufactures the length variability (speaking rate, silence) that makes
// output-length prediction hard while keeping the task learnable.

#include <cstdint>
#include <string>
#include <vector>

#include "maskctc/features.hpp"
#include "maskctc/rng.hpp"
#include "maskctc/vocab.hpp"

namespace maskctc {

struct CorpusConfig {
    int vocab_size = 20;  // content tokens
    int feat_dim = 24;
    int frames_per_token_min = 2;
    int frames_per_token_max = 6;
    double silence_prob = 0.3;
    int silence_len_min = 1;
    int silence_len_max = 4;
    double noise_sigma = 0.3;
    int utt_len_min = 4;
    int utt_len_max = 20;
    uint64_t seed = 1;

    void validate() const;
};

// Unit-norm prototype for one content token, a pure function of
// (seed, token id).
std::vector<float> token_prototype(const CorpusConfig& cfg, int token_id);

Utterance gen_utterance(const CorpusConfig& cfg, Rng& rng, const std::string& id = "");

// `stream` separates train/dev/eval draws; utterance i uses the derived
// generator split(stream).split(i), so generation parallelizes per
// utterance and reproduces exactly.
std::vector<Utterance> gen_split(const CorpusConfig& cfg, uint64_t stream, int count, const std::string& id_prefix);

// Binary dataset container, little-endian:
//   magic "MCDS", version u32, utterance count u32, then per utterance:
//   id (u32 length + UTF-8 bytes), L u32, token ids u32[L], T u32, D u32,
//   features f32[T*D] row-major.
void write_dataset(const std::vector<Utterance>& utts, const std::string& path);
std::vector<Utterance> read_dataset(const std::string& path);

std::string corpus_config_to_json(const CorpusConfig& cfg);
CorpusConfig corpus_config_from_json(const std::string& text);

}  // namespace maskctc
