#include "quotestorm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

#include "quotestorm/util.hpp"

namespace fs = std::filesystem;

namespace quotestorm {

std::optional<Date> parse_date(std::string_view text) {
    text = trim(text);
    if (text.size() != 10 || text[4] != '-' || text[7] != '-') return std::nullopt;
    auto y = parse_int(text.substr(0, 4));
    auto m = parse_int(text.substr(5, 2));
    auto d = parse_int(text.substr(8, 2));
    if (!y || !m || !d) return std::nullopt;
    std::chrono::year_month_day ymd{std::chrono::year(static_cast<int>(*y)),
                                    std::chrono::month(static_cast<unsigned>(*m)),
                                    std::chrono::day(static_cast<unsigned>(*d))};
    if (!ymd.ok()) return std::nullopt;
    return Date(ymd);
}

std::string format_date(Date date) {
    std::chrono::year_month_day ymd(date);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

std::optional<int> label_return(double next_return, double up, double down) {
    if (next_return > up) return 1;
    if (next_return < down) return -1;
    return std::nullopt;
}

// ----------------------------------------------------------- reading

namespace {

// Seconds since epoch for "Wed Jan 01 03:59:03 +0000 2014" or
// "2014-01-01T03:59:03..." / "2014-01-01 03:59:03".
std::optional<long long> parse_timestamp(std::string_view s) {
    s = trim(s);
    auto hms = [](std::string_view t) -> std::optional<long long> {
        if (t.size() < 8 || t[2] != ':' || t[5] != ':') return std::nullopt;
        auto h = parse_int(t.substr(0, 2)), m = parse_int(t.substr(3, 2)), sec = parse_int(t.substr(6, 2));
        if (!h || !m || !sec) return std::nullopt;
        return *h * 3600 + *m * 60 + *sec;
    };
    if (s.size() >= 19 && s[4] == '-' && (s[10] == 'T' || s[10] == ' ')) {
        auto d = parse_date(s.substr(0, 10));
        auto t = hms(s.substr(11, 8));
        if (!d || !t) return std::nullopt;
        return static_cast<long long>(d->time_since_epoch().count()) * 86400 + *t;
    }
    if (s.size() >= 30 && s[3] == ' ') {
        static const char* months[] = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                       "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
        std::string_view mon = s.substr(4, 3);
        int mi = -1;
        for (int i = 0; i < 12; ++i)
            if (mon == months[i]) mi = i + 1;
        auto day = parse_int(s.substr(8, 2));
        auto t = hms(s.substr(11, 8));
        auto year = parse_int(s.substr(s.size() - 4));
        if (mi < 0 || !day || !t || !year) return std::nullopt;
        std::chrono::year_month_day ymd{std::chrono::year(static_cast<int>(*year)),
                                        std::chrono::month(static_cast<unsigned>(mi)),
                                        std::chrono::day(static_cast<unsigned>(*day))};
        if (!ymd.ok()) return std::nullopt;
        return static_cast<long long>(Date(ymd).time_since_epoch().count()) * 86400 + *t;
    }
    return std::nullopt;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.emplace_back(trim(field));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::vector<PriceBar> read_price_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingData(path.string());
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw FormatError(path.string(), 1, "empty price file");
    ++line_no;
    auto header = split_csv(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) {
        std::string h = header[i];
        std::transform(h.begin(), h.end(), h.begin(), [](unsigned char c) { return std::tolower(c); });
        col.emplace(h, i);
    }
    for (const char* need : {"date", "open", "high", "low", "close", "volume"}) {
        if (!col.count(need)) throw FormatError(path.string(), 1, std::string("missing column '") + need + "'");
    }
    std::vector<PriceBar> bars;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto f = split_csv(line);
        if (f.size() < header.size()) throw FormatError(path.string(), line_no, "short row");
        PriceBar bar;
        auto d = parse_date(f[col["date"]]);
        if (!d) throw FormatError(path.string(), line_no, "bad date '" + f[col["date"]] + "'");
        bar.date = *d;
        auto num = [&](const char* name) {
            auto v = parse_double(f[col[name]]);
            if (!v || !std::isfinite(*v)) throw FormatError(path.string(), line_no, std::string("bad ") + name);
            return *v;
        };
        bar.open = num("open");
        bar.high = num("high");
        bar.low = num("low");
        bar.close = num("close");
        bar.volume = num("volume");
        if (bar.open <= 0 || bar.high <= 0 || bar.low <= 0 || bar.close <= 0)
            throw FormatError(path.string(), line_no, "non-positive price");
        if (bar.high < std::max(bar.open, bar.close) || bar.low > std::min(bar.open, bar.close))
            throw FormatError(path.string(), line_no, "high/low inconsistent with open/close");
        bars.push_back(bar);
    }
    std::stable_sort(bars.begin(), bars.end(), [](const PriceBar& a, const PriceBar& b) { return a.date < b.date; });
    for (std::size_t i = 1; i < bars.size(); ++i) {
        if (bars[i].date == bars[i - 1].date)
            throw FormatError(path.string(), 0, "duplicate date " + format_date(bars[i].date));
    }
    return bars;
}

std::vector<RawTweet> read_tweet_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw MissingData(path.string());
    std::vector<RawTweet> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        nlohmann::json obj;
        try {
            obj = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path.string(), line_no, e.what());
        }
        if (!obj.is_object() || !obj.contains("text")) throw FormatError(path.string(), line_no, "no 'text' field");
        RawTweet t;
        const auto& text = obj["text"];
        if (text.is_string()) {
            t.text = text.get<std::string>();
        } else if (text.is_array()) {
            // preprocessed StockNet files store token lists
            for (const auto& tok : text) {
                if (!tok.is_string()) throw FormatError(path.string(), line_no, "non-string token");
                if (!t.text.empty()) t.text += ' ';
                t.text += tok.get<std::string>();
            }
        } else {
            throw FormatError(path.string(), line_no, "'text' is neither string nor list");
        }
        if (obj.contains("created_at") && obj["created_at"].is_string()) t.created_at = obj["created_at"].get<std::string>();
        out.push_back(std::move(t));
    }
    return out;
}

}  // namespace

MarketData read_stocknet_dir(const std::string& root) {
    fs::path price_dir = fs::path(root) / "price";
    fs::path tweet_dir = fs::path(root) / "tweet";
    if (!fs::is_directory(price_dir)) throw MissingData("price directory " + price_dir.string());

    std::map<std::string, fs::path> price_files;
    for (const auto& e : fs::directory_iterator(price_dir)) {
        if (e.is_regular_file() && e.path().extension() == ".csv") price_files[e.path().stem().string()] = e.path();
    }
    std::set<std::string> tweet_tickers;
    if (fs::is_directory(tweet_dir)) {
        for (const auto& e : fs::directory_iterator(tweet_dir))
            if (e.is_directory()) tweet_tickers.insert(e.path().filename().string());
    }
    for (const auto& t : tweet_tickers) {
        if (!price_files.count(t)) throw MissingData("price file for ticker " + t);
    }

    MarketData data;
    for (const auto& [ticker, path] : price_files) {
        StockSeries s;
        s.ticker = ticker;
        s.bars = read_price_csv(path);
        fs::path dir = tweet_dir / ticker;
        if (fs::is_directory(dir)) {
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(dir))
                if (e.is_regular_file()) files.push_back(e.path());
            std::sort(files.begin(), files.end());
            for (const auto& f : files) {
                auto d = parse_date(f.stem().string().substr(0, 10));
                if (!d) continue;
                auto tweets = read_tweet_file(f);
                auto& slot = s.tweets[*d];
                slot.insert(slot.end(), tweets.begin(), tweets.end());
            }
        }
        data.stocks.push_back(std::move(s));
    }
    return data;
}

void write_stocknet_dir(const std::string& root, const MarketData& data) {
    fs::path price_dir = fs::path(root) / "price";
    fs::path tweet_dir = fs::path(root) / "tweet";
    fs::create_directories(price_dir);
    fs::create_directories(tweet_dir);
    for (const auto& s : data.stocks) {
        std::ofstream out(price_dir / (s.ticker + ".csv"), std::ios::binary);
        if (!out) throw Error("cannot write price file for " + s.ticker);
        out << "date,open,high,low,close,volume\n";
        for (const auto& b : s.bars) {
            out << format_date(b.date) << ',' << format_double(b.open) << ',' << format_double(b.high) << ','
                << format_double(b.low) << ',' << format_double(b.close) << ',' << format_double(b.volume) << '\n';
        }
        fs::path dir = tweet_dir / s.ticker;
        fs::create_directories(dir);
        for (const auto& [date, tweets] : s.tweets) {
            std::ofstream tf(dir / format_date(date), std::ios::binary);
            for (const auto& t : tweets) {
                nlohmann::ordered_json obj;
                obj["text"] = t.text;
                obj["created_at"] = t.created_at;
                tf << obj.dump() << '\n';
            }
        }
    }
}

// ------------------------------------------------------------ building

std::vector<PriceFeatures> price_features(const std::vector<PriceBar>& bars) {
    std::vector<PriceFeatures> out(bars.size());
    double mean = 0, var = 0;
    for (const auto& b : bars) mean += b.volume;
    if (!bars.empty()) mean /= static_cast<double>(bars.size());
    for (const auto& b : bars) var += (b.volume - mean) * (b.volume - mean);
    double sd = bars.empty() ? 0 : std::sqrt(var / static_cast<double>(bars.size()));
    for (std::size_t i = 0; i < bars.size(); ++i) {
        const auto& b = bars[i];
        out[i][0] = b.open / b.close - 1.0;
        out[i][1] = b.high / b.close - 1.0;
        out[i][2] = b.low / b.close - 1.0;
        out[i][3] = i == 0 ? 0.0 : b.close / bars[i - 1].close - 1.0;
        out[i][4] = sd > 0 ? (b.volume - mean) / sd : 0.0;
    }
    return out;
}

namespace {

// Tweets grouped by the trading day they inform: a tweet file dated d feeds
// the first trading day >= d. Keeps the most recent `cap` tweets per day.
std::vector<std::vector<Tweet>> assign_tweets(const StockSeries& s, const Vocab& vocab, const DatasetConfig& cfg) {
    std::vector<std::vector<std::pair<std::optional<long long>, const RawTweet*>>> raw(s.bars.size());
    for (const auto& [date, tweets] : s.tweets) {
        auto it = std::lower_bound(s.bars.begin(), s.bars.end(), date,
                                   [](const PriceBar& b, Date d) { return b.date < d; });
        if (it == s.bars.end()) continue;
        auto idx = static_cast<std::size_t>(it - s.bars.begin());
        for (const auto& t : tweets) raw[idx].emplace_back(parse_timestamp(t.created_at), &t);
    }
    std::vector<std::vector<Tweet>> out(s.bars.size());
    for (std::size_t d = 0; d < raw.size(); ++d) {
        auto& day = raw[d];
        bool all_timed = std::all_of(day.begin(), day.end(), [](const auto& p) { return p.first.has_value(); });
        if (all_timed) {
            std::stable_sort(day.begin(), day.end(), [](const auto& a, const auto& b) { return *a.first < *b.first; });
        }
        std::vector<Tweet> tweets;
        for (const auto& [ts, rt] : day) {
            try {
                tweets.push_back(tokenize(rt->text, vocab, cfg.max_tweet_len));
            } catch (const EmptyText&) {
            }
        }
        if (cfg.max_tweets_per_day > 0 && tweets.size() > cfg.max_tweets_per_day) {
            tweets.erase(tweets.begin(), tweets.end() - static_cast<std::ptrdiff_t>(cfg.max_tweets_per_day));
        }
        out[d] = std::move(tweets);
    }
    return out;
}

void rolling_split(std::vector<Instance> all, const DatasetConfig& cfg, DatasetSplit& split) {
    if (!cfg.periods.empty()) {
        for (auto& inst : all) {
            for (const auto& p : cfg.periods) {
                if (inst.date >= p.train_begin && inst.date <= p.train_end) {
                    split.train.push_back(std::move(inst));
                    break;
                }
                if (inst.date >= p.test_begin && inst.date <= p.test_end) {
                    split.test.push_back(std::move(inst));
                    break;
                }
            }
        }
        split.periods = cfg.periods;
        return;
    }
    if (cfg.n_periods == 0) throw ConfigError("n_periods must be >= 1");
    if (!(cfg.train_fraction > 0 && cfg.train_fraction < 1)) throw ConfigError("train_fraction must be in (0, 1)");
    std::vector<Date> dates;
    for (const auto& inst : all) dates.push_back(inst.date);
    std::sort(dates.begin(), dates.end());
    dates.erase(std::unique(dates.begin(), dates.end()), dates.end());
    if (dates.empty()) return;
    std::size_t periods = std::min(cfg.n_periods, dates.size());
    std::map<Date, bool> is_test;
    for (std::size_t p = 0; p < periods; ++p) {
        std::size_t b = p * dates.size() / periods;
        std::size_t e = (p + 1) * dates.size() / periods;
        std::size_t len = e - b;
        auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(len)));
        if (len >= 2) n_train = std::clamp<std::size_t>(n_train, 1, len - 1);
        else n_train = len;
        for (std::size_t i = b; i < e; ++i) is_test[dates[i]] = (i - b) >= n_train;
        Period period{dates[b], dates[b + (n_train ? n_train - 1 : 0)], dates[std::min(b + n_train, e - 1)], dates[e - 1]};
        split.periods.push_back(period);
    }
    for (auto& inst : all) {
        if (is_test[inst.date]) split.test.push_back(std::move(inst));
        else split.train.push_back(std::move(inst));
    }
}

}  // namespace

DatasetSplit build_dataset(const MarketData& data, const Vocab& vocab, const DatasetConfig& cfg) {
    const std::size_t h = cfg.window;
    std::vector<Instance> all;
    DatasetSplit split;
    for (const auto& s : data.stocks) {
        split.prices[s.ticker] = s.bars;
        if (s.bars.size() < h + 2) continue;
        auto feats = price_features(s.bars);
        auto tweets = assign_tweets(s, vocab, cfg);
        for (std::size_t k = h; k + 1 < s.bars.size(); ++k) {
            bool gap = false;
            for (std::size_t i = k - h; i < k + 1; ++i) {
                if ((s.bars[i + 1].date - s.bars[i].date).count() > cfg.max_gap_days) gap = true;
            }
            if (gap) continue;
            double r = s.bars[k + 1].close / s.bars[k].close - 1.0;
            auto label = label_return(r, cfg.up_threshold, cfg.down_threshold);
            if (!label) continue;
            Instance inst;
            inst.stock = s.ticker;
            inst.date = s.bars[k].date;
            inst.next_date = s.bars[k + 1].date;
            inst.label = *label;
            inst.next_return = r;
            for (std::size_t i = k - h; i <= k; ++i) {
                inst.tweet_window.push_back(TweetCollection{s.bars[i].date, s.ticker, tweets[i]});
                inst.price_window.push_back(feats[i]);
            }
            all.push_back(std::move(inst));
        }
    }
    std::stable_sort(all.begin(), all.end(), [](const Instance& a, const Instance& b) {
        if (a.date != b.date) return a.date < b.date;
        return a.stock < b.stock;
    });
    for (std::size_t i = 0; i < all.size(); ++i) all[i].id = i;
    rolling_split(std::move(all), cfg, split);
    return split;
}

DatasetSplit load_stocknet_dir(const std::string& root, const Vocab& vocab, const DatasetConfig& cfg) {
    return build_dataset(read_stocknet_dir(root), vocab, cfg);
}

// ----------------------------------------------------------- synthetic

namespace {

const std::vector<std::vector<std::string>> kPositiveClusters = {
    {"surge", "soar", "jump", "climb"},       {"bullish", "upbeat", "optimistic", "confident"},
    {"beat", "outperform", "exceed", "top"},  {"buy", "accumulate", "long", "add"},
    {"profit", "gain", "earnings", "growth"}, {"breakout", "rally", "rebound", "recovery"},
};
const std::vector<std::vector<std::string>> kNegativeClusters = {
    {"plunge", "sink", "drop", "slide"},       {"bearish", "gloomy", "pessimistic", "worried"},
    {"miss", "underperform", "lag", "trail"},  {"sell", "dump", "short", "exit"},
    {"loss", "deficit", "writedown", "decline"}, {"breakdown", "selloff", "slump", "crash"},
};
const std::vector<std::string> kFillers = {
    "the", "stock", "today", "market", "shares", "trading", "watch", "chart", "news", "week",
    "price", "volume", "update", "session", "analyst", "report", "call", "open", "close", "investors",
};

std::string cluster_word(bool positive, std::size_t c, std::size_t w) {
    const auto& lists = positive ? kPositiveClusters : kNegativeClusters;
    if (c < lists.size() && w < lists[c].size()) return lists[c][w];
    return std::string(positive ? "pos" : "neg") + std::to_string(c) + "w" + std::to_string(w);
}

struct SynthVocab {
    Lexicon lexicon;
    std::vector<std::vector<TokenId>> pos, neg;  // [cluster][word]
    std::vector<TokenId> noise;
};

SynthVocab build_synth_vocab(const SynthConfig& cfg, const std::vector<std::string>& cashtags, Rng& rng) {
    const std::size_t D = cfg.dim;
    std::vector<std::string> words;
    for (std::size_t c = 0; c < cfg.n_clusters; ++c)
        for (std::size_t w = 0; w < cfg.cluster_size; ++w) words.push_back(cluster_word(true, c, w));
    for (std::size_t c = 0; c < cfg.n_clusters; ++c)
        for (std::size_t w = 0; w < cfg.cluster_size; ++w) words.push_back(cluster_word(false, c, w));
    std::vector<std::string> noise_words;
    for (std::size_t i = 0; i < cfg.n_noise_words; ++i)
        noise_words.push_back(i < kFillers.size() ? kFillers[i] : "tok" + std::to_string(i));
    words.insert(words.end(), noise_words.begin(), noise_words.end());
    words.insert(words.end(), cashtags.begin(), cashtags.end());

    // Polarity lives on axis 0. Cluster c of each polarity shares a topic
    // direction r_c (orthonormal, orthogonal to axis 0) with its mirror cluster.
    const double alpha = 0.5, beta = 1.0, jitter = 0.08;
    std::vector<Vec> topics;
    for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
        Vec r(D);
        for (std::size_t i = 1; i < D; ++i) r[i] = normal01(rng);
        for (const auto& q : topics) {
            double dot = 0;
            for (std::size_t i = 0; i < D; ++i) dot += r[i] * q[i];
            for (std::size_t i = 0; i < D; ++i) r[i] -= dot * q[i];
        }
        double n = 0;
        for (double v : r) n += v * v;
        n = std::sqrt(n);
        for (double& v : r) v /= n;
        topics.push_back(std::move(r));
    }

    std::vector<double> rows(D, 0.0);  // pad
    auto add_row = [&](const Vec& v) { rows.insert(rows.end(), v.begin(), v.end()); };
    auto log_uniform = [&](double spread) {
        double lo = std::log(1.0 / spread), hi = std::log(spread);
        return std::exp(lo + (hi - lo) * uniform01(rng));
    };
    for (int sign : {+1, -1}) {
        for (std::size_t c = 0; c < cfg.n_clusters; ++c) {
            for (std::size_t w = 0; w < cfg.cluster_size; ++w) {
                Vec v(D);
                for (std::size_t i = 0; i < D; ++i)
                    v[i] = beta * topics[c][i] + jitter * normal01(rng) / std::sqrt(static_cast<double>(D));
                v[0] = sign * alpha;
                double scale = cfg.strength_spread > 1.0 ? log_uniform(cfg.strength_spread) : 1.0;
                for (double& x : v) x *= scale;
                add_row(v);
            }
        }
    }
    for (std::size_t i = 0; i < noise_words.size() + cashtags.size(); ++i) {
        Vec v(D);
        for (std::size_t j = 1; j < D; ++j) v[j] = normal01(rng);
        // keep noise out of the sentiment topics so its neighbors are other noise words
        for (const auto& r : topics) {
            double proj = 0;
            for (std::size_t j = 0; j < D; ++j) proj += v[j] * r[j];
            for (std::size_t j = 0; j < D; ++j) v[j] -= proj * r[j];
        }
        double norm = 0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        for (double& x : v) x *= cfg.noise_word_scale / norm;
        add_row(v);
    }

    SynthVocab out{Lexicon{Vocab(words), EmbeddingTable(D, std::move(rows))}, {}, {}, {}};
    TokenId next = 1;
    out.pos.assign(cfg.n_clusters, {});
    out.neg.assign(cfg.n_clusters, {});
    for (std::size_t c = 0; c < cfg.n_clusters; ++c)
        for (std::size_t w = 0; w < cfg.cluster_size; ++w) out.pos[c].push_back(next++);
    for (std::size_t c = 0; c < cfg.n_clusters; ++c)
        for (std::size_t w = 0; w < cfg.cluster_size; ++w) out.neg[c].push_back(next++);
    for (std::size_t i = 0; i < noise_words.size(); ++i) out.noise.push_back(next++);
    return out;
}

void check_clusters(const SynthConfig& cfg, const SynthVocab& sv) {
    const auto& table = sv.lexicon.table;
    auto polarity = [&](TokenId id) { return table.vector(id)[0] > 0 ? 1 : (table.vector(id)[0] < 0 ? -1 : 0); };
    for (const auto* group : {&sv.pos, &sv.neg}) {
        for (const auto& cluster : *group) {
            for (TokenId id : cluster) {
                std::size_t close_same = 0;
                for (TokenId other : cluster)
                    if (other != id && table.cosine(id, other) >= 0.8) ++close_same;
                auto syn = nearest_synonyms(id, cfg.n_u, table);
                bool opposite = false;
                for (TokenId c : syn.candidates)
                    if (c != Vocab::pad_id && polarity(c) == -polarity(id)) opposite = true;
                if (close_same < 3 || !opposite)
                    throw ConfigError("signal vocabulary cannot satisfy the synonym-cluster constraints for '" +
                                      sv.lexicon.vocab.word(id) + "'");
            }
        }
    }
}

}  // namespace

SyntheticData gen_synthetic(const SynthConfig& cfg, std::uint64_t seed, const DatasetConfig& dataset) {
    if (!(cfg.signal_strength >= 0 && cfg.signal_strength <= 1)) throw ConfigError("signal_strength must be in [0, 1]");
    if (!(cfg.sentiment_persistence >= 0 && cfg.sentiment_persistence <= 1))
        throw ConfigError("sentiment_persistence must be in [0, 1]");
    if (!(cfg.polarity_agreement >= 0 && cfg.polarity_agreement <= 1))
        throw ConfigError("polarity_agreement must be in [0, 1]");
    if (!(cfg.quiet_day_prob >= 0 && cfg.quiet_day_prob <= 1)) throw ConfigError("quiet_day_prob must be in [0, 1]");
    if (cfg.n_stocks == 0 || cfg.n_days < dataset.window + 2) throw ConfigError("too few stocks or days");
    if (cfg.dim < 2 || cfg.n_clusters == 0 || cfg.n_clusters >= cfg.dim)
        throw ConfigError("need 1 <= n_clusters < dim");
    if (cfg.cluster_size < 4 || cfg.cluster_size > cfg.n_u)
        throw ConfigError("signal clusters need 4..n_u words so every signal word has >= 3 same-polarity synonyms "
                          "and an opposite-polarity word inside its top-n_u neighborhood");
    if (cfg.n_noise_words == 0) throw ConfigError("n_noise_words must be >= 1");
    if (!(cfg.noise_word_scale > 0)) throw ConfigError("noise_word_scale must be > 0");
    if (cfg.quiet_min == 0 || cfg.quiet_min > cfg.quiet_max || cfg.busy_min == 0 || cfg.busy_min > cfg.busy_max ||
        cfg.noise_words_min > cfg.noise_words_max)
        throw ConfigError("inconsistent count ranges");
    if (!(cfg.return_noise >= 0) || !(cfg.sentiment_magnitude >= 0)) throw ConfigError("negative noise or magnitude");
    auto start = parse_date(cfg.start_date);
    if (!start) throw ConfigError("bad start_date " + cfg.start_date);

    Rng rng(mix_seed(seed, 0x5157));
    std::vector<std::string> tickers, cashtags;
    for (std::size_t s = 0; s < cfg.n_stocks; ++s) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "STK%02zu", s);
        tickers.emplace_back(buf);
        std::string tag = "$" + std::string(buf);
        std::transform(tag.begin(), tag.end(), tag.begin(), [](unsigned char c) { return std::tolower(c); });
        cashtags.push_back(tag);
    }
    SynthVocab sv = build_synth_vocab(cfg, cashtags, rng);
    check_clusters(cfg, sv);

    std::vector<Date> days;
    for (Date d = *start; days.size() < cfg.n_days; d += std::chrono::days(1)) {
        std::chrono::weekday wd(d);
        if (wd == std::chrono::Saturday || wd == std::chrono::Sunday) continue;
        days.push_back(d);
    }

    MarketData market;
    for (std::size_t s = 0; s < cfg.n_stocks; ++s) {
        Rng srng(mix_seed(seed, 1000 + s));
        StockSeries series;
        series.ticker = tickers[s];
        std::vector<int> sentiment(cfg.n_days + 1);
        for (std::size_t d = 0; d < sentiment.size(); ++d) {
            bool keep = d > 0 && uniform01(srng) < cfg.sentiment_persistence;
            sentiment[d] = keep ? sentiment[d - 1] : (uniform01(srng) < 0.5 ? 1 : -1);
        }

        double close = 50.0 + 100.0 * uniform01(srng);
        for (std::size_t d = 0; d < cfg.n_days; ++d) {
            double prev = close;
            if (d > 0) {
                double r = cfg.return_noise * normal01(srng) + cfg.signal_strength * cfg.sentiment_magnitude * sentiment[d];
                r = std::max(r, -0.5);
                close = prev * (1.0 + r);
            }
            PriceBar bar;
            bar.date = days[d];
            bar.close = close;
            bar.open = prev * (1.0 + 0.003 * normal01(srng));
            bar.high = std::max(bar.open, bar.close) * (1.0 + 0.005 * std::abs(normal01(srng)));
            bar.low = std::min(bar.open, bar.close) * (1.0 - 0.005 * std::abs(normal01(srng)));
            bar.volume = std::round(1e6 * std::exp(0.3 * normal01(srng)));
            series.bars.push_back(bar);

            // tweets on day d talk about tomorrow's sentiment
            bool quiet = uniform01(srng) < cfg.quiet_day_prob;
            std::size_t lo = quiet ? cfg.quiet_min : cfg.busy_min, hi = quiet ? cfg.quiet_max : cfg.busy_max;
            std::size_t count = lo + uniform_index(srng, hi - lo + 1);
            std::vector<RawTweet> tweets;
            for (std::size_t i = 0; i < count; ++i) {
                std::vector<std::string> words{cashtags[s]};
                for (std::size_t k = 0; k < cfg.signal_words_per_tweet; ++k) {
                    int pol = sentiment[d + 1];
                    if (uniform01(srng) >= cfg.polarity_agreement) pol = -pol;
                    const auto& clusters = pol > 0 ? sv.pos : sv.neg;
                    const auto& cluster = clusters[uniform_index(srng, clusters.size())];
                    words.push_back(sv.lexicon.vocab.word(cluster[uniform_index(srng, cluster.size())]));
                }
                std::size_t n_noise =
                    cfg.noise_words_min + uniform_index(srng, cfg.noise_words_max - cfg.noise_words_min + 1);
                for (std::size_t k = 0; k < n_noise; ++k)
                    words.push_back(sv.lexicon.vocab.word(sv.noise[uniform_index(srng, sv.noise.size())]));
                for (std::size_t k = words.size(); k > 1; --k) std::swap(words[k - 1], words[uniform_index(srng, k)]);
                std::string text;
                for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
                char ts[40];
                std::snprintf(ts, sizeof(ts), "%sT%02zu:%02zu:00Z", format_date(days[d]).c_str(), 9 + i / 60, i % 60);
                tweets.push_back(RawTweet{text, ts});
            }
            if (!tweets.empty()) series.tweets[days[d]] = std::move(tweets);
        }
        market.stocks.push_back(std::move(series));
    }

    SyntheticData out;
    out.split = build_dataset(market, sv.lexicon.vocab, dataset);
    out.market = std::move(market);
    out.lexicon = std::move(sv.lexicon);
    return out;
}

}  // namespace quotestorm
