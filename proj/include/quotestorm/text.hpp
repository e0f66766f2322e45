#ifndef QUOTESTORM_TEXT_HPP
#define QUOTESTORM_TEXT_HPP

#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "quotestorm/common.hpp"

namespace quotestorm {

// Ordered token list with the padding token fixed at id 0.
class Vocab {
public:
    static constexpr TokenId pad_id = 0;
    static constexpr const char* pad_token = "<pad>";

    Vocab();
    // Builds ids 1..N from `words` in order; throws ConfigError on duplicates
    // or on an explicit pad token.
    explicit Vocab(const std::vector<std::string>& words);

    std::size_t size() const { return words_.size(); }
    std::optional<TokenId> find(std::string_view word) const;
    // OOV words map to pad_id.
    TokenId index(std::string_view word) const;
    const std::string& word(TokenId id) const { return words_.at(static_cast<std::size_t>(id)); }
    const std::vector<std::string>& words() const { return words_; }

    // FNV-1a over the ordered word list, hex encoded. Checkpoints carry it.
    std::string hash() const;

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, TokenId> index_;
};

// Dense row-major embedding matrix; row pad_id is all zeros.
class EmbeddingTable {
public:
    EmbeddingTable() = default;
    EmbeddingTable(std::size_t dim, std::vector<double> rows);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return dim_ == 0 ? 0 : rows_.size() / dim_; }
    std::span<const double> vector(TokenId id) const {
        return {rows_.data() + static_cast<std::size_t>(id) * dim_, dim_};
    }
    double norm(TokenId id) const { return norms_[static_cast<std::size_t>(id)]; }
    // Zero when either vector has zero norm.
    double cosine(TokenId a, TokenId b) const;

private:
    std::size_t dim_ = 0;
    std::vector<double> rows_;
    std::vector<double> norms_;
};

struct Lexicon {
    Vocab vocab;
    EmbeddingTable table;
};

struct Tweet {
    std::string raw;
    std::vector<std::string> words;  // normalized surface forms, one per token
    std::vector<TokenId> tokens;

    std::size_t length() const { return tokens.size(); }
};

inline constexpr std::size_t kDefaultMaxTweetLen = 32;

// Lowercases and splits on whitespace. Cashtags, hashtags, @mentions and URLs
// survive as single tokens; other words lose leading/trailing punctuation.
std::vector<std::string> normalize_words(std::string_view text);

// Throws EmptyText when nothing survives normalization. Words beyond
// `max_len` are dropped.
Tweet tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len = kDefaultMaxTweetLen);

// Text format: one `word v1 ... vd` row per line. Throws FormatError on a
// dimension change, a non-finite or unparsable value, or a duplicate word.
Lexicon load_embeddings(const std::string& path);
void save_embeddings(const std::string& path, const Lexicon& lexicon);

struct SynonymSet {
    TokenId query = Vocab::pad_id;
    std::vector<TokenId> candidates;
    std::vector<double> similarities;
    // True for pad entries added because fewer than k words qualified.
    std::vector<bool> filled;

    std::size_t size() const { return candidates.size(); }
    bool operator==(const SynonymSet&) const = default;
};

inline constexpr double kNoSimilarityFloor = -std::numeric_limits<double>::infinity();

// Top-k words by cosine similarity, excluding the query and pad, ties broken
// by lower id. Pad-filled to exactly k entries.
SynonymSet nearest_synonyms(TokenId word_id, std::size_t k, const EmbeddingTable& table,
                            double min_sim = kNoSimilarityFloor);

// Convex combination of candidate vectors. Throws SimplexError when `weights`
// is not a probability vector of the set's size.
Vec soft_word_embedding(const SynonymSet& synonyms, std::span<const double> weights,
                        const EmbeddingTable& table);

// Synonym sets for a subset of the vocabulary, all of the same size k.
class SynonymTable {
public:
    SynonymTable() = default;
    explicit SynonymTable(std::size_t k) : k_(k) {}

    std::size_t k() const { return k_; }
    std::size_t size() const { return sets_.size(); }
    void insert(SynonymSet set);
    const SynonymSet* find(TokenId id) const;
    const std::map<TokenId, SynonymSet>& sets() const { return sets_; }

    // {"word": [["syn", sim], ...]} with pad fills written as ["<pad>", 0].
    void save_json(const std::string& path, const Vocab& vocab) const;
    static SynonymTable load_json(const std::string& path, const Vocab& vocab);

    bool operator==(const SynonymTable& other) const;

private:
    std::size_t k_ = 0;
    std::map<TokenId, SynonymSet> sets_;
};

// Builds the table for `ids` (pad ignored). The OpenMP kernel and the serial
// reference produce identical tables.
SynonymTable build_synonym_table(const EmbeddingTable& table, std::span<const TokenId> ids, std::size_t k,
                                 double min_sim = kNoSimilarityFloor);
SynonymTable build_synonym_table_serial(const EmbeddingTable& table, std::span<const TokenId> ids,
                                        std::size_t k, double min_sim = kNoSimilarityFloor);

}  // namespace quotestorm

#endif  // QUOTESTORM_TEXT_HPP
