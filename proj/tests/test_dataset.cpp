#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "quotestorm/dataset.hpp"
#include "quotestorm/victim.hpp"

using namespace quotestorm;

namespace {

// One ticker, n consecutive days from 2020-01-01, each close `step` above the last.
MarketData ramp_market(std::size_t n, double step) {
    StockSeries s;
    s.ticker = "AAA";
    double close = 100;
    Date d0 = *parse_date("2020-01-01");
    for (std::size_t i = 0; i < n; ++i) {
        PriceBar b;
        b.date = d0 + std::chrono::days(static_cast<int>(i));
        b.open = close;
        b.close = close;
        b.high = close * 1.01;
        b.low = close * 0.99;
        b.volume = 1000 + static_cast<double>(i);
        s.bars.push_back(b);
        close *= 1 + step;
    }
    MarketData m;
    m.stocks.push_back(s);
    return m;
}

std::size_t count_words(const MarketData& m) {
    std::size_t n = 0;
    for (const auto& s : m.stocks)
        for (const auto& [d, ts] : s.tweets) n += ts.size();
    return n;
}

}  // namespace

TEST_CASE("label_return thresholds") {
    CHECK(label_return(0.0100) == 1);
    CHECK(label_return(-0.0100) == -1);
    CHECK_FALSE(label_return(0.0).has_value());
    CHECK_FALSE(label_return(0.0055).has_value());
    CHECK_FALSE(label_return(-0.005).has_value());
    CHECK(label_return(0.00551) == 1);
    CHECK(label_return(-0.00501) == -1);
}

TEST_CASE("dates parse and format") {
    auto d = parse_date("2014-03-07");
    REQUIRE(d);
    CHECK(format_date(*d) == "2014-03-07");
    CHECK_FALSE(parse_date("2014-13-01"));
    CHECK_FALSE(parse_date("2014-02-30"));
    CHECK_FALSE(parse_date("yesterday"));
}

TEST_CASE("price features") {
    std::vector<PriceBar> bars(2);
    bars[0] = {*parse_date("2020-01-01"), 10, 12, 9, 11, 100};
    bars[1] = {*parse_date("2020-01-02"), 11, 13, 10, 12, 300};
    auto f = price_features(bars);
    CHECK(f[0][0] == doctest::Approx(10.0 / 11 - 1));
    CHECK(f[0][1] == doctest::Approx(12.0 / 11 - 1));
    CHECK(f[0][2] == doctest::Approx(9.0 / 11 - 1));
    CHECK(f[0][3] == 0.0);
    CHECK(f[1][3] == doctest::Approx(12.0 / 11 - 1));
    CHECK(f[0][4] == doctest::Approx(-1.0));
    CHECK(f[1][4] == doctest::Approx(1.0));
}

TEST_CASE("stocknet directory: 10 rising days with h=4 give 5 up instances") {
    auto dir = qs_test::temp_dir("ds_ramp");
    MarketData m = ramp_market(10, 0.02);
    m.stocks[0].tweets[*parse_date("2020-01-05")] = {RawTweet{"shares surge", "2020-01-05T10:00:00Z"}};
    write_stocknet_dir(dir.string(), m);
    Vocab v({"shares", "surge"});
    DatasetConfig cfg;
    cfg.window = 4;
    DatasetSplit split = load_stocknet_dir(dir.string(), v, cfg);
    std::vector<Instance> all = split.train;
    all.insert(all.end(), split.test.begin(), split.test.end());
    CHECK(all.size() == 5);
    for (const auto& inst : all) {
        CHECK(inst.label == 1);
        CHECK(inst.tweet_window.size() == 5);
        CHECK(inst.price_window.size() == 5);
        CHECK(inst.next_return == doctest::Approx(0.02));
    }
    // day 2020-01-05 is index 4: the anchor of the first instance
    const Instance* first = nullptr;
    for (const auto& inst : all)
        if (inst.id == 0) first = &inst;
    REQUIRE(first);
    CHECK(format_date(first->date) == "2020-01-05");
    CHECK(first->anchor_tweets().tweets.size() == 1);
    CHECK(first->tweet_window[0].tweets.empty());
}

TEST_CASE("stocknet directory errors") {
    auto dir = qs_test::temp_dir("ds_err");
    CHECK_THROWS_AS(read_stocknet_dir((dir / "nothing").string()), MissingData);

    MarketData m = ramp_market(6, 0.01);
    write_stocknet_dir(dir.string(), m);
    qs_test::write_file(dir / "tweet" / "ZZZ" / "2020-01-02", "{\"text\": \"hi\"}\n");
    CHECK_THROWS_AS(read_stocknet_dir(dir.string()), MissingData);
    std::filesystem::remove_all(dir / "tweet" / "ZZZ");

    qs_test::write_file(dir / "tweet" / "AAA" / "2020-01-02", "{\"text\": \"ok\"}\n{not json\n");
    try {
        read_stocknet_dir(dir.string());
        FAIL("expected FormatError");
    } catch (const FormatError& e) {
        CHECK(e.line() == 2);
    }
    qs_test::write_file(dir / "tweet" / "AAA" / "2020-01-02", "{\"text\": [\"token\", \"list\"]}\n");
    MarketData back = read_stocknet_dir(dir.string());
    CHECK(back.stocks[0].tweets.begin()->second[0].text == "token list");
}

TEST_CASE("weekend tweets feed the next trading day and gaps drop windows") {
    MarketData m = ramp_market(12, 0.01);
    auto& bars = m.stocks[0].bars;
    // remove a run of 5 calendar days to create a gap of 6 between rows 5 and 6
    Date gap_start = bars[6].date;
    for (std::size_t i = 6; i < bars.size(); ++i) bars[i].date += std::chrono::days(5);
    m.stocks[0].tweets[gap_start] = {RawTweet{"rally", ""}};
    Vocab v({"rally"});
    DatasetConfig cfg;
    cfg.window = 1;
    DatasetSplit split = build_dataset(m, v, cfg);
    std::vector<Instance> all = split.train;
    all.insert(all.end(), split.test.begin(), split.test.end());
    // anchors k=1..10; windows k-1..k+1 whose steps cross the 5->6 gap are dropped: k=5,6
    CHECK(all.size() == 8);
    bool found = false;
    for (const auto& inst : all) {
        CHECK(inst.date != bars[6].date);
        if (inst.date == bars[7].date) {
            found = true;
            CHECK(inst.tweet_window[0].date == bars[6].date);
            CHECK(inst.tweet_window[0].tweets.size() == 1);
        }
    }
    CHECK(found);
}

TEST_CASE("max_tweets_per_day keeps the most recent") {
    MarketData m = ramp_market(4, 0.01);
    auto d = m.stocks[0].bars[1].date;
    m.stocks[0].tweets[d] = {RawTweet{"late", "2020-01-02T12:00:00Z"}, RawTweet{"early", "2020-01-02T08:00:00Z"},
                             RawTweet{"mid", "2020-01-02T10:00:00Z"}};
    Vocab v({"early", "mid", "late"});
    DatasetConfig cfg;
    cfg.window = 1;
    cfg.max_tweets_per_day = 2;
    DatasetSplit split = build_dataset(m, v, cfg);
    std::vector<Instance> all = split.train;
    all.insert(all.end(), split.test.begin(), split.test.end());
    REQUIRE_FALSE(all.empty());
    const auto& day = all[0].anchor_tweets();
    REQUIRE(day.tweets.size() == 2);
    CHECK(day.tweets[0].words[0] == "mid");
    CHECK(day.tweets[1].words[0] == "late");
}

TEST_CASE("synthetic data: determinism, balance and split properties") {
    SynthConfig c = qs_test::small_synth();
    c.n_stocks = 6;
    c.n_days = 200;
    DatasetConfig dc;
    SyntheticData a = gen_synthetic(c, 99, dc);
    SyntheticData b = gen_synthetic(c, 99, dc);
    auto da = qs_test::temp_dir("ds_syn_a");
    auto db = qs_test::temp_dir("ds_syn_b");
    write_stocknet_dir(da.string(), a.market);
    write_stocknet_dir(db.string(), b.market);
    save_embeddings((da / "emb.txt").string(), a.lexicon);
    save_embeddings((db / "emb.txt").string(), b.lexicon);
    for (const auto& e : std::filesystem::recursive_directory_iterator(da)) {
        if (!e.is_regular_file()) continue;
        auto rel = std::filesystem::relative(e.path(), da);
        CHECK(qs_test::read_file(e.path()) == qs_test::read_file(db / rel));
    }
    CHECK(count_words(a.market) > 0);
    CHECK(gen_synthetic(c, 100, dc).lexicon.table.vector(1)[0] != a.lexicon.table.vector(1)[0]);

    // exported layout loads back to the same instances
    Lexicon lex = load_embeddings((da / "emb.txt").string());
    CHECK(lex.vocab.hash() == a.lexicon.vocab.hash());
    DatasetSplit loaded = load_stocknet_dir(da.string(), lex.vocab, dc);
    REQUIRE(loaded.train.size() == a.split.train.size());
    REQUIRE(loaded.test.size() == a.split.test.size());
    for (std::size_t i = 0; i < loaded.test.size(); ++i) {
        CHECK(loaded.test[i].label == a.split.test[i].label);
        CHECK(loaded.test[i].anchor_tweets().tweets.size() == a.split.test[i].anchor_tweets().tweets.size());
    }

    std::size_t pos = 0, total = 0;
    std::set<std::size_t> ids;
    for (const auto* part : {&a.split.train, &a.split.test})
        for (const auto& inst : *part) {
            pos += inst.label == 1;
            ++total;
            CHECK(ids.insert(inst.id).second);
            CHECK(inst.tweet_window.size() == dc.window + 1);
            const auto& bars = a.split.prices.at(inst.stock);
            CHECK(inst.tweet_window.front().date >= bars.front().date);
            CHECK(inst.next_date <= bars.back().date);
            for (std::size_t d = 1; d < inst.tweet_window.size(); ++d)
                CHECK(inst.tweet_window[d - 1].date < inst.tweet_window[d].date);
            CHECK(inst.anchor_tweets().tweets.size() <= dc.max_tweets_per_day);
        }
    double imbalance = std::abs(2.0 * static_cast<double>(pos) - static_cast<double>(total)) / static_cast<double>(total);
    CHECK(imbalance < 0.1);

    CHECK(a.split.periods.size() == dc.n_periods);
    for (const auto& p : a.split.periods) {
        Date max_train{}, min_test = Date::max();
        for (const auto& inst : a.split.train)
            if (inst.date >= p.train_begin && inst.date <= p.train_end) max_train = std::max(max_train, inst.date);
        for (const auto& inst : a.split.test)
            if (inst.date >= p.test_begin && inst.date <= p.test_end) min_test = std::min(min_test, inst.date);
        CHECK(min_test > max_train);
    }
}

TEST_CASE("synthetic signal words have same-polarity synonyms and an opposite neighbor") {
    SynthConfig c = qs_test::small_synth();
    SyntheticData d = gen_synthetic(c, 5);
    const auto& t = d.lexicon.table;
    // polarity is the sign of the first embedding axis; neutral words sit at 0
    auto polarity = [&](TokenId id) {
        double x = t.vector(id)[0];
        return x > 0 ? 1 : (x < 0 ? -1 : 0);
    };
    std::size_t checked = 0;
    for (std::size_t id = 1; id < d.lexicon.vocab.size(); ++id) {
        auto tid = static_cast<TokenId>(id);
        int p = polarity(tid);
        if (p == 0) continue;
        ++checked;
        SynonymSet s = nearest_synonyms(tid, c.n_u, t);
        int same = 0;
        bool opposite = false;
        for (std::size_t k = 0; k < s.size(); ++k) {
            if (polarity(s.candidates[k]) == p && s.similarities[k] >= 0.8) ++same;
            if (polarity(s.candidates[k]) == -p) opposite = true;
        }
        CHECK(same >= 3);
        CHECK(opposite);
    }
    CHECK(checked > 0);
}

TEST_CASE("synthetic config validation") {
    SynthConfig c = qs_test::small_synth();
    c.signal_strength = 1.5;
    CHECK_THROWS_AS(gen_synthetic(c, 1), ConfigError);
    c = qs_test::small_synth();
    c.cluster_size = 2;
    CHECK_THROWS_AS(gen_synthetic(c, 1), ConfigError);
    c = qs_test::small_synth();
    c.quiet_min = 5;
    c.quiet_max = 2;
    CHECK_THROWS_AS(gen_synthetic(c, 1), ConfigError);
}

namespace {

double bag_test_accuracy(SynthConfig c, const DatasetConfig& dc, std::uint64_t seed) {
    SyntheticData d = gen_synthetic(c, seed, dc);
    VictimHyper h;
    h.embed_dim = c.dim;
    h.window = dc.window;
    auto model = make_victim(VictimKind::BagLinear, h, 1);
    TrainConfig tc;
    tc.epochs = 40;
    tc.lr = 0.02;
    TrainReport r = train(*model, d.split, d.lexicon.table, tc);
    MESSAGE("test instances ", r.test.n, ", accuracy ", r.test.accuracy);
    CHECK(r.test.n >= 1000);
    return r.test.accuracy;
}

}  // namespace

TEST_CASE("no signal gives chance accuracy; pure signal is learnable") {
    SynthConfig c;
    c.n_stocks = 24;
    DatasetConfig dc;
    dc.window = 0;
    c.signal_strength = 0.0;
    double chance = bag_test_accuracy(c, dc, 21);
    CHECK(std::abs(chance - 0.5) <= 0.05);

    c.signal_strength = 1.0;
    c.return_noise = 0.0;
    CHECK(bag_test_accuracy(c, dc, 21) >= 0.95);
}
