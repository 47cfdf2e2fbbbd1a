#include "vg/text_encoder.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace vg::text {

TokenizedQuery tokenize(const std::string& text) {
    TokenizedQuery q;
    std::string cur;
    for (char ch : text) {
        const unsigned char c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else if (!cur.empty()) {
            q.tokens.push_back(cur);
            cur.clear();
        }
    }
    if (!cur.empty()) q.tokens.push_back(cur);
    if (q.tokens.empty()) throw InvalidQueryError("query has no words: \"" + text + "\"");
    return q;
}

GloveTable load_glove(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open embedding file: " + path);
    GloveTable table;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        std::vector<double> vec;
        double v;
        while (ls >> v) vec.push_back(v);
        if (vec.empty()) continue;
        if (table.dim == 0) table.dim = static_cast<int>(vec.size());
        if (static_cast<int>(vec.size()) != table.dim)
            throw std::runtime_error("inconsistent embedding width in " + path + " at word " + word);
        table.vectors.emplace(std::move(word), std::move(vec));
    }
    if (table.dim == 0) throw std::runtime_error("no embeddings found in " + path);
    return table;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& corpus_queries, int embed_dim,
                             const GloveTable* glove, std::uint64_t seed) {
    Vocabulary v;
    v.words_ = {"<pad>", "<unk>"};
    v.index_ = {{"<pad>", kPad}, {"<unk>", kUnk}};
    for (const auto& query : corpus_queries) {
        for (auto& tok : tokenize(query).tokens) {
            if (!v.index_.count(tok)) {
                v.index_.emplace(tok, static_cast<int>(v.words_.size()));
                v.words_.push_back(tok);
            }
        }
    }
    v.embed_dim_ = glove ? glove->dim : embed_dim;
    v.init_embeddings_ = Tensor({static_cast<int>(v.words_.size()), v.embed_dim_});
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 0.1);
    auto random_row = [&](int row) {
        for (int j = 0; j < v.embed_dim_; ++j) v.init_embeddings_.at(row, j) = dist(rng);
    };
    // row 0 (padding) stays zero
    random_row(kUnk);
    for (int i = 2; i < static_cast<int>(v.words_.size()); ++i) {
        const std::vector<double>* vec = nullptr;
        if (glove) {
            auto it = glove->vectors.find(v.words_[static_cast<size_t>(i)]);
            if (it != glove->vectors.end()) vec = &it->second;
        }
        if (vec) {
            for (int j = 0; j < v.embed_dim_; ++j) v.init_embeddings_.at(i, j) = (*vec)[static_cast<size_t>(j)];
        } else {
            random_row(i);
            if (!glove) v.used_random_init_ = true;
        }
    }
    if (!glove) v.used_random_init_ = true;
    return v;
}

Vocabulary Vocabulary::from_words(std::vector<std::string> words, int embed_dim) {
    Vocabulary v;
    v.words_ = std::move(words);
    for (int i = 0; i < static_cast<int>(v.words_.size()); ++i)
        v.index_.emplace(v.words_[static_cast<size_t>(i)], i);
    v.embed_dim_ = embed_dim;
    v.init_embeddings_ = Tensor({static_cast<int>(v.words_.size()), embed_dim});
    return v;
}

int Vocabulary::lookup(const std::string& word) const {
    auto it = index_.find(word);
    return it == index_.end() ? kUnk : it->second;
}

void Vocabulary::encode(TokenizedQuery& q, int max_len) const {
    if (static_cast<int>(q.tokens.size()) > max_len) q.tokens.resize(static_cast<size_t>(max_len));
    q.ids.clear();
    q.ids.reserve(q.tokens.size());
    for (const auto& tok : q.tokens) q.ids.push_back(lookup(tok));
}

TextEncoder::TextEncoder(nn::ParamRegistry& reg, nn::Init& init, const Vocabulary& vocab,
                         int lstm_hidden, int d_model) {
    embedding = nn::Embedding(reg, init, "text.embedding", vocab.size(), vocab.embed_dim());
    // overwrite the random table with the vocabulary's initial rows
    embedding.table->value = vocab.initial_embeddings();
    lstm = nn::BiLSTM(reg, init, "text.lstm", vocab.embed_dim(), lstm_hidden);
    proj = nn::Linear(reg, init, "text.proj", 2 * lstm_hidden, d_model, false);
}

QueryEncoding TextEncoder::forward(const std::vector<int>& ids) const {
    if (ids.empty()) throw InvalidQueryError("empty token id list");
    QueryEncoding enc;
    enc.embeddings = embedding.forward(ids);
    enc.states = lstm.forward(enc.embeddings);
    enc.qprime = proj.forward(enc.states);
    return enc;
}

}  // namespace vg::text
