#include "quotestorm/text.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "quotestorm/util.hpp"

namespace quotestorm {

// ---------------------------------------------------------------- Vocab

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string>& words) {
    words_.reserve(words.size() + 1);
    words_.emplace_back(pad_token);
    index_.emplace(pad_token, pad_id);
    for (const auto& w : words) {
        if (w == pad_token) throw ConfigError("vocabulary contains the reserved pad token");
        auto id = static_cast<TokenId>(words_.size());
        if (!index_.emplace(w, id).second) throw ConfigError("duplicate vocabulary word: " + w);
        words_.push_back(w);
    }
}

std::optional<TokenId> Vocab::find(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

TokenId Vocab::index(std::string_view word) const {
    return find(word).value_or(pad_id);
}

std::string Vocab::hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& w : words_) {
        for (unsigned char c : w) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        h ^= 0x0a;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ------------------------------------------------------- EmbeddingTable

EmbeddingTable::EmbeddingTable(std::size_t dim, std::vector<double> rows) : dim_(dim), rows_(std::move(rows)) {
    if (dim_ == 0 || rows_.size() % dim_ != 0 || rows_.empty())
        throw ShapeError("embedding rows do not match dimension");
    for (std::size_t c = 0; c < dim_; ++c) {
        if (rows_[c] != 0.0) throw ShapeError("pad embedding must be the zero vector");
    }
    norms_.resize(size());
    for (std::size_t r = 0; r < size(); ++r) {
        double s = 0;
        for (std::size_t c = 0; c < dim_; ++c) {
            double v = rows_[r * dim_ + c];
            if (!std::isfinite(v)) throw ShapeError("non-finite embedding value");
            s += v * v;
        }
        norms_[r] = std::sqrt(s);
    }
}

double EmbeddingTable::cosine(TokenId a, TokenId b) const {
    double na = norm(a), nb = norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    auto va = vector(a), vb = vector(b);
    double dot = 0;
    for (std::size_t c = 0; c < dim_; ++c) dot += va[c] * vb[c];
    return dot / (na * nb);
}

// ------------------------------------------------------------ tokenize

namespace {

bool is_word_char(unsigned char c) { return std::isalnum(c) || c >= 0x80; }

std::string lower(std::string_view s) {
    std::string out(s);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::string strip_punct(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && !is_word_char(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && !is_word_char(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

// '$', '#' or '@' followed by a word; trailing punctuation dropped.
std::string tag_token(std::string_view s) {
    std::size_t e = 1;
    while (e < s.size() && (is_word_char(static_cast<unsigned char>(s[e])) || s[e] == '_' ||
                            (s[e] == '.' && e + 1 < s.size() && is_word_char(static_cast<unsigned char>(s[e + 1])))))
        ++e;
    return std::string(s.substr(0, e));
}

bool is_url(std::string_view s) {
    return s.starts_with("http://") || s.starts_with("https://") || s.starts_with("www.");
}

}  // namespace

std::vector<std::string> normalize_words(std::string_view text) {
    std::vector<std::string> out;
    std::string lowered = lower(text);
    std::istringstream in(lowered);
    std::string piece;
    while (in >> piece) {
        std::string tok;
        if (is_url(piece)) {
            std::string_view v = piece;
            while (!v.empty() && (v.back() == '.' || v.back() == ',' || v.back() == ')' || v.back() == ';'))
                v.remove_suffix(1);
            tok = std::string(v);
        } else if ((piece[0] == '$' || piece[0] == '#' || piece[0] == '@') && piece.size() > 1 &&
                   std::isalpha(static_cast<unsigned char>(piece[1]))) {
            tok = tag_token(piece);
        } else {
            tok = strip_punct(piece);
        }
        if (!tok.empty()) out.push_back(std::move(tok));
    }
    return out;
}

Tweet tokenize(std::string_view text, const Vocab& vocab, std::size_t max_len) {
    Tweet t;
    t.raw = std::string(text);
    t.words = normalize_words(text);
    if (t.words.empty()) throw EmptyText();
    if (max_len > 0 && t.words.size() > max_len) t.words.resize(max_len);
    t.tokens.reserve(t.words.size());
    for (const auto& w : t.words) t.tokens.push_back(vocab.index(w));
    return t;
}

// ---------------------------------------------------------- embeddings

Lexicon load_embeddings(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingData("embedding file " + path);
    std::vector<std::string> words;
    std::vector<double> rows;
    std::size_t dim = 0;
    std::string line;
    std::size_t line_no = 0;
    std::unordered_map<std::string, std::size_t> seen;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view view = trim(line);
        if (view.empty()) continue;
        std::size_t pos = view.find(' ');
        if (pos == std::string_view::npos) throw FormatError(path, line_no, "row has no vector");
        std::string word(view.substr(0, pos));
        std::vector<double> vec;
        std::string_view rest = view.substr(pos + 1);
        while (!rest.empty()) {
            std::size_t sp = rest.find(' ');
            std::string_view field = rest.substr(0, sp);
            if (!field.empty()) {
                auto v = parse_double(field);
                if (!v) throw FormatError(path, line_no, "unparsable value '" + std::string(field) + "'");
                if (!std::isfinite(*v)) throw FormatError(path, line_no, "non-finite value");
                vec.push_back(*v);
            }
            if (sp == std::string_view::npos) break;
            rest.remove_prefix(sp + 1);
        }
        if (vec.empty()) throw FormatError(path, line_no, "row has no vector");
        if (dim == 0) {
            dim = vec.size();
            rows.assign(dim, 0.0);  // pad row
        } else if (vec.size() != dim) {
            throw FormatError(path, line_no,
                              "dimension " + std::to_string(vec.size()) + " != " + std::to_string(dim));
        }
        if (word == Vocab::pad_token) throw FormatError(path, line_no, "reserved pad token in file");
        if (!seen.emplace(word, line_no).second) throw FormatError(path, line_no, "duplicate word '" + word + "'");
        words.push_back(std::move(word));
        rows.insert(rows.end(), vec.begin(), vec.end());
    }
    if (dim == 0) throw FormatError(path, line_no, "no embedding rows");
    return Lexicon{Vocab(words), EmbeddingTable(dim, std::move(rows))};
}

void save_embeddings(const std::string& path, const Lexicon& lexicon) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    const auto& table = lexicon.table;
    for (std::size_t id = 1; id < lexicon.vocab.size(); ++id) {
        out << lexicon.vocab.word(static_cast<TokenId>(id));
        for (double v : table.vector(static_cast<TokenId>(id))) out << ' ' << format_double(v);
        out << '\n';
    }
}

// ------------------------------------------------------------ synonyms

SynonymSet nearest_synonyms(TokenId word_id, std::size_t k, const EmbeddingTable& table, double min_sim) {
    if (word_id == Vocab::pad_id) throw PadQuery();
    if (k == 0) throw ConfigError("synonym count k must be >= 1");
    if (static_cast<std::size_t>(word_id) >= table.size()) throw ShapeError("word id out of range");

    std::vector<std::pair<double, TokenId>> scored;
    scored.reserve(table.size());
    for (std::size_t id = 1; id < table.size(); ++id) {
        auto other = static_cast<TokenId>(id);
        if (other == word_id) continue;
        double sim = table.cosine(word_id, other);
        if (sim < min_sim) continue;
        scored.emplace_back(sim, other);
    }
    auto better = [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    };
    std::size_t take = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);

    SynonymSet set;
    set.query = word_id;
    for (std::size_t i = 0; i < take; ++i) {
        set.candidates.push_back(scored[i].second);
        set.similarities.push_back(scored[i].first);
        set.filled.push_back(false);
    }
    while (set.candidates.size() < k) {
        set.candidates.push_back(Vocab::pad_id);
        set.similarities.push_back(0.0);
        set.filled.push_back(true);
    }
    return set;
}

Vec soft_word_embedding(const SynonymSet& synonyms, std::span<const double> weights, const EmbeddingTable& table) {
    if (weights.size() != synonyms.size()) throw SimplexError("weight count does not match synonym count");
    double sum = 0;
    for (double w : weights) {
        if (!(w >= 0.0)) throw SimplexError("negative or NaN weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw SimplexError("weights sum to " + format_double(sum));
    Vec out(table.dim(), 0.0);
    for (std::size_t k = 0; k < weights.size(); ++k) {
        auto v = table.vector(synonyms.candidates[k]);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] += weights[k] * v[c];
    }
    return out;
}

// -------------------------------------------------------- SynonymTable

void SynonymTable::insert(SynonymSet set) {
    if (set.size() != k_) throw ShapeError("synonym set size differs from table k");
    TokenId id = set.query;
    sets_[id] = std::move(set);
}

const SynonymSet* SynonymTable::find(TokenId id) const {
    auto it = sets_.find(id);
    return it == sets_.end() ? nullptr : &it->second;
}

bool SynonymTable::operator==(const SynonymTable& other) const {
    return k_ == other.k_ && sets_ == other.sets_;
}

void SynonymTable::save_json(const std::string& path, const Vocab& vocab) const {
    nlohmann::ordered_json doc = nlohmann::ordered_json::object();
    for (const auto& [id, set] : sets_) {
        auto arr = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < set.size(); ++i)
            arr.push_back({vocab.word(set.candidates[i]), set.similarities[i]});
        doc[vocab.word(id)] = std::move(arr);
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << doc.dump() << '\n';
}

SynonymTable SynonymTable::load_json(const std::string& path, const Vocab& vocab) {
    std::ifstream in(path);
    if (!in) throw MissingData("synonym cache " + path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path, 1, e.what());
    }
    if (!doc.is_object()) throw FormatError(path, 1, "expected an object");
    SynonymTable table;
    bool first = true;
    for (const auto& [word, arr] : doc.items()) {
        auto id = vocab.find(word);
        if (!id || !arr.is_array()) throw FormatError(path, 1, "bad entry for '" + word + "'");
        SynonymSet set;
        set.query = *id;
        for (const auto& pair : arr) {
            if (!pair.is_array() || pair.size() != 2) throw FormatError(path, 1, "bad pair for '" + word + "'");
            std::string syn = pair[0].get<std::string>();
            auto sid = vocab.find(syn);
            if (!sid) throw FormatError(path, 1, "unknown synonym '" + syn + "'");
            set.candidates.push_back(*sid);
            set.similarities.push_back(pair[1].get<double>());
            set.filled.push_back(*sid == Vocab::pad_id);
        }
        if (first) {
            table.k_ = set.size();
            first = false;
        }
        table.insert(std::move(set));
    }
    return table;
}

// ------------------------------------------------- table build kernels

namespace {

std::vector<TokenId> unique_ids(std::span<const TokenId> ids) {
    std::vector<TokenId> out;
    for (TokenId id : ids)
        if (id != Vocab::pad_id) out.push_back(id);
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

}  // namespace

SynonymTable build_synonym_table(const EmbeddingTable& table, std::span<const TokenId> ids, std::size_t k,
                                 double min_sim) {
    auto query = unique_ids(ids);
    // exceptions must not escape the parallel region
    if (k == 0) throw ConfigError("synonym count k must be >= 1");
    if (!query.empty() && static_cast<std::size_t>(query.back()) >= table.size())
        throw ShapeError("word id out of range");
    std::vector<SynonymSet> sets(query.size());
    const auto n = static_cast<std::ptrdiff_t>(query.size());
#pragma omp parallel for schedule(dynamic, 8)
    for (std::ptrdiff_t i = 0; i < n; ++i) {
        sets[static_cast<std::size_t>(i)] = nearest_synonyms(query[static_cast<std::size_t>(i)], k, table, min_sim);
    }
    SynonymTable out(k);
    for (auto& s : sets) out.insert(std::move(s));
    return out;
}

SynonymTable build_synonym_table_serial(const EmbeddingTable& table, std::span<const TokenId> ids, std::size_t k,
                                        double min_sim) {
    SynonymTable out(k);
    for (TokenId id : unique_ids(ids)) out.insert(nearest_synonyms(id, k, table, min_sim));
    return out;
}

}  // namespace quotestorm
