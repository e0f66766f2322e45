#ifndef QUOTESTORM_DATASET_HPP
#define QUOTESTORM_DATASET_HPP

#include <array>
#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "quotestorm/text.hpp"

namespace quotestorm {

using Date = std::chrono::sys_days;

// YYYY-MM-DD
std::optional<Date> parse_date(std::string_view text);
std::string format_date(Date date);

struct PriceBar {
    Date date;
    double open = 0, high = 0, low = 0, close = 0, volume = 0;
};

struct TweetCollection {
    Date date;
    std::string stock;
    std::vector<Tweet> tweets;
};

inline constexpr std::size_t kPriceFeatures = 5;
using PriceFeatures = std::array<double, kPriceFeatures>;

struct Instance {
    std::size_t id = 0;
    std::string stock;
    Date date;       // anchor day t
    Date next_date;  // day t+1 whose return is predicted
    std::vector<TweetCollection> tweet_window;  // days t-h .. t
    std::vector<PriceFeatures> price_window;    // days t-h .. t
    int label = 0;                              // +1 up, -1 down
    double next_return = 0;

    const TweetCollection& anchor_tweets() const { return tweet_window.back(); }
};

struct Period {
    Date train_begin, train_end, test_begin, test_end;
};

struct DatasetSplit {
    std::vector<Instance> train;
    std::vector<Instance> test;
    std::vector<Period> periods;
    std::map<std::string, std::vector<PriceBar>> prices;  // by ticker, ascending dates
};

inline constexpr double kUpThreshold = 0.0055;
inline constexpr double kDownThreshold = -0.005;

// +1 above the up threshold, -1 below the down threshold, nullopt in between.
std::optional<int> label_return(double next_return, double up = kUpThreshold, double down = kDownThreshold);

struct DatasetConfig {
    std::size_t window = 5;  // h; windows hold h+1 days
    std::size_t max_tweets_per_day = 30;
    std::size_t max_tweet_len = kDefaultMaxTweetLen;
    double up_threshold = kUpThreshold;
    double down_threshold = kDownThreshold;
    // Calendar-day gap between consecutive trading rows above which the
    // window counts as having a missing trading day.
    int max_gap_days = 4;
    std::size_t n_periods = 7;
    double train_fraction = 0.7;
    // Explicit rolling periods; when empty, n_periods/train_fraction apply.
    std::vector<Period> periods;
};

struct RawTweet {
    std::string text;
    std::string created_at;
};

struct StockSeries {
    std::string ticker;
    std::vector<PriceBar> bars;                        // ascending dates
    std::map<Date, std::vector<RawTweet>> tweets;      // keyed by tweet-file date
};

struct MarketData {
    std::vector<StockSeries> stocks;  // sorted by ticker
};

// Reads `price/<TICKER>.csv` and `tweet/<TICKER>/<YYYY-MM-DD>` JSON-lines files.
MarketData read_stocknet_dir(const std::string& root);
void write_stocknet_dir(const std::string& root, const MarketData& data);

// Per-day features: open/close-1, high/close-1, low/close-1, close/prev_close-1
// (0 on the first row) and the ticker-level z-score of volume.
std::vector<PriceFeatures> price_features(const std::vector<PriceBar>& bars);

DatasetSplit build_dataset(const MarketData& data, const Vocab& vocab, const DatasetConfig& cfg);
DatasetSplit load_stocknet_dir(const std::string& root, const Vocab& vocab, const DatasetConfig& cfg = {});

struct SynthConfig {
    std::size_t n_stocks = 8;
    std::size_t n_days = 300;
    double signal_strength = 0.9;  // in [0, 1]
    double sentiment_magnitude = 0.02;  // mu
    double return_noise = 0.01;         // std of epsilon
    // Probability that a tweet's signal word has the polarity of the next day's sentiment.
    double polarity_agreement = 0.9;
    // Probability that a day's sentiment repeats the previous day's.
    double sentiment_persistence = 0.6;

    std::size_t dim = 50;
    std::size_t n_clusters = 6;   // per polarity
    std::size_t cluster_size = 4;
    std::size_t n_noise_words = 120;
    std::size_t n_u = 5;  // neighborhood that must reach the opposite polarity
    // Signal word norms are drawn log-uniformly from [1/spread, spread].
    double strength_spread = 2.0;
    // Typical norm of noise-word and cashtag vectors.
    double noise_word_scale = 0.5;

    // Day volume is bimodal: a quiet day has quiet_min..quiet_max tweets,
    // otherwise busy_min..busy_max.
    double quiet_day_prob = 0.5;
    std::size_t quiet_min = 1, quiet_max = 1;
    std::size_t busy_min = 24, busy_max = 30;
    std::size_t noise_words_min = 1, noise_words_max = 2;
    std::size_t signal_words_per_tweet = 1;

    std::string start_date = "2014-01-02";
};

struct SyntheticData {
    MarketData market;
    Lexicon lexicon;
    DatasetSplit split;
};

// Throws ConfigError for out-of-range settings or when the signal vocabulary
// cannot satisfy the synonym-cluster constraints.
SyntheticData gen_synthetic(const SynthConfig& config, std::uint64_t seed, const DatasetConfig& dataset = {});

}  // namespace quotestorm

#endif  // QUOTESTORM_DATASET_HPP
