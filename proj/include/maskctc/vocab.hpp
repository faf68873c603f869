#pragma once

#include <string>
#include <vector>

#include "maskctc/errors.hpp"

namespace maskctc {

// Token inventory. Index layout is fixed:
//   0 <blank>   CTC alignment symbol only, never a decoder output
//   1 <MASK>
//   2 <pad>
//   3 <sos>
//   4 <eos>
//   5.. content tokens
//
// The CTC head scores all size() classes (content + specials + blank);
// the decoder head scores the size()-1 non-blank classes, so decoder
// class c corresponds to token id c+1.
class Vocab {
public:
    static constexpr int kBlank = 0;
    static constexpr int kMask = 1;
    static constexpr int kPad = 2;
    static constexpr int kSos = 3;
    static constexpr int kEos = 4;
    static constexpr int kContentStart = 5;

    Vocab() = default;
    explicit Vocab(std::vector<std::string> table) : table_(std::move(table)) {
        if (table_.size() < kContentStart) throw DataError("vocab table smaller than reserved prefix");
    }

    // Content tokens are single letters a.., or t<i> past 26.
    static Vocab make_synthetic(int content_count) {
        std::vector<std::string> t = {"<blank>", "<MASK>", "<pad>", "<sos>", "<eos>"};
        for (int i = 0; i < content_count; ++i) {
            if (i < 26) t.push_back(std::string(1, static_cast<char>('a' + i)));
            else t.push_back("t" + std::to_string(i));
        }
        return Vocab(std::move(t));
    }

    int size() const { return static_cast<int>(table_.size()); }
    int content_count() const { return size() - kContentStart; }
    int ctc_classes() const { return size(); }       // |V| + 1
    int dec_classes() const { return size() - 1; }   // |V|

    static int dec_class_of(int token) { return token - 1; }
    static int token_of_dec_class(int c) { return c + 1; }
    static bool is_reserved(int token) { return token < kContentStart; }

    const std::string& str(int id) const {
        if (id < 0 || id >= size()) throw ContractError("vocab id " + std::to_string(id) + " out of range");
        return table_[static_cast<size_t>(id)];
    }
    const std::vector<std::string>& table() const { return table_; }

    bool operator==(const Vocab& o) const { return table_ == o.table_; }

private:
    std::vector<std::string> table_;
};

}  // namespace maskctc
