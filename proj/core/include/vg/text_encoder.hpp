#pragma once

#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "vg/nn.hpp"

namespace vg::text {

class InvalidQueryError : public std::runtime_error {
public:
    explicit InvalidQueryError(const std::string& msg) : std::runtime_error(msg) {}
};

struct TokenizedQuery {
    std::vector<std::string> tokens;
    std::vector<int> ids;  // filled in by Vocabulary::encode
};

// Lowercase, drop punctuation, split on whitespace.
TokenizedQuery tokenize(const std::string& text);

// GloVe text format: one line per word, "word v1 ... vE".
struct GloveTable {
    int dim = 0;
    std::unordered_map<std::string, std::vector<double>> vectors;
};
GloveTable load_glove(const std::string& path);

// Word -> index map plus the initial embedding table. Index 0 is padding,
// index 1 the out-of-vocabulary token. Corpus words missing from GloVe get
// per-word random vectors fixed at build time.
class Vocabulary {
public:
    static constexpr int kPad = 0;
    static constexpr int kUnk = 1;

    static Vocabulary build(const std::vector<std::string>& corpus_queries, int embed_dim,
                            const GloveTable* glove, std::uint64_t seed);
    // Reconstruct from a checkpointed word list (embedding rows live in the
    // model parameters).
    static Vocabulary from_words(std::vector<std::string> words, int embed_dim);

    int lookup(const std::string& word) const;
    void encode(TokenizedQuery& q, int max_len) const;

    int size() const { return static_cast<int>(words_.size()); }
    int embed_dim() const { return embed_dim_; }
    const std::vector<std::string>& words() const { return words_; }
    const Tensor& initial_embeddings() const { return init_embeddings_; }
    bool used_random_init() const { return used_random_init_; }

private:
    std::vector<std::string> words_;  // index -> word, [0]="<pad>", [1]="<unk>"
    std::unordered_map<std::string, int> index_;
    Tensor init_embeddings_;  // [V, E]
    int embed_dim_ = 0;
    bool used_random_init_ = false;
};

struct QueryEncoding {
    ad::Var embeddings;  // Q  [n, E]
    ad::Var states;      // h  [n, 2L]
    ad::Var qprime;      // Q' [n, D]
};

// Embedding -> BiLSTM -> affine projection into the common dimension D.
struct TextEncoder {
    nn::Embedding embedding;
    nn::BiLSTM lstm;
    nn::Linear proj;

    TextEncoder() = default;
    TextEncoder(nn::ParamRegistry& reg, nn::Init& init, const Vocabulary& vocab, int lstm_hidden,
                int d_model);
    QueryEncoding forward(const std::vector<int>& ids) const;
};

}  // namespace vg::text
