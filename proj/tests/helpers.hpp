#ifndef QUOTESTORM_TESTS_HELPERS_HPP
#define QUOTESTORM_TESTS_HELPERS_HPP

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "quotestorm/dataset.hpp"
#include "quotestorm/util.hpp"
#include "quotestorm/victim.hpp"

namespace qs_test {

namespace fs = std::filesystem;

// Fresh, empty directory under the system temp dir.
inline fs::path temp_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("quotestorm_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

inline void write_file(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Small synthetic market: few tweets per day, short windows.
inline quotestorm::SynthConfig small_synth() {
    quotestorm::SynthConfig c;
    c.n_stocks = 3;
    c.n_days = 80;
    c.dim = 12;
    c.n_clusters = 3;
    c.n_noise_words = 30;
    c.quiet_min = 1;
    c.quiet_max = 3;
    c.busy_min = 2;
    c.busy_max = 4;
    return c;
}

inline quotestorm::DatasetConfig small_dataset() {
    quotestorm::DatasetConfig d;
    d.window = 2;
    return d;
}

inline quotestorm::VictimHyper small_hyper(std::size_t dim) {
    quotestorm::VictimHyper h;
    h.embed_dim = dim;
    h.hidden = 6;
    h.window = 2;
    return h;
}

// Random embedding table: `words` rows of dimension `dim` plus the pad row.
inline quotestorm::EmbeddingTable random_table(std::size_t words, std::size_t dim, std::uint64_t seed) {
    quotestorm::Rng rng(seed);
    std::vector<double> rows(dim, 0.0);
    for (std::size_t i = 0; i < words * dim; ++i) rows.push_back(quotestorm::normal01(rng));
    return quotestorm::EmbeddingTable(dim, rows);
}

inline quotestorm::Tweet make_tweet(std::vector<quotestorm::TokenId> tokens) {
    quotestorm::Tweet t;
    for (auto id : tokens) t.words.push_back("w" + std::to_string(id));
    t.tokens = std::move(tokens);
    return t;
}

// Instance over h+1 days with 1..max_tweets tweets per day of 1..max_len tokens
// drawn from ids 1..vocab_words. A token is pad with probability pad_prob.
inline quotestorm::Instance random_instance(std::size_t h, std::size_t vocab_words, std::size_t max_tweets,
                                            std::size_t max_len, std::uint64_t seed, double pad_prob = 0.0) {
    using namespace quotestorm;
    Rng rng(seed);
    Instance inst;
    inst.id = static_cast<std::size_t>(seed);
    inst.stock = "TST";
    Date d0 = *parse_date("2021-03-01");
    for (std::size_t d = 0; d <= h; ++d) {
        TweetCollection day;
        day.date = d0 + std::chrono::days(static_cast<int>(d));
        day.stock = inst.stock;
        std::size_t n = 1 + uniform_index(rng, max_tweets);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t len = 1 + uniform_index(rng, max_len);
            std::vector<TokenId> toks;
            for (std::size_t j = 0; j < len; ++j)
                toks.push_back(uniform01(rng) < pad_prob ? Vocab::pad_id
                                                         : static_cast<TokenId>(1 + uniform_index(rng, vocab_words)));
            day.tweets.push_back(make_tweet(toks));
        }
        inst.tweet_window.push_back(day);
        PriceFeatures f;
        for (double& x : f) x = 0.02 * normal01(rng);
        inst.price_window.push_back(f);
    }
    inst.date = inst.tweet_window.back().date;
    inst.next_date = inst.date + std::chrono::days(1);
    inst.label = uniform01(rng) < 0.5 ? 1 : -1;
    inst.next_return = 0.01 * inst.label;
    return inst;
}

}  // namespace qs_test

#endif
