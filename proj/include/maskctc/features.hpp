#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace maskctc {

// One utterance worth of acoustic-style input: T frames of D dims,
// row-major.
struct FeatureSeq {
    int frames = 0;
    int dim = 0;
    std::vector<float> data;

    float at(int t, int d) const { return data[static_cast<size_t>(t) * dim + d]; }
    bool operator==(const FeatureSeq& o) const {
        return frames == o.frames && dim == o.dim && data == o.data;
    }
};

struct Utterance {
    std::string id;
    FeatureSeq feats;
    std::vector<int> transcript;  // vocab token ids, content tokens only

    bool operator==(const Utterance& o) const {
        return id == o.id && feats == o.feats && transcript == o.transcript;
    }
};

}  // namespace maskctc
