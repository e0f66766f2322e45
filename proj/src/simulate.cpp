#include "quotestorm/simulate.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "quotestorm/util.hpp"

namespace quotestorm {

void TradingConfig::validate() const {
    if (!(initial_value > 0)) throw ConfigError("initial_value must be > 0");
    if (!(transaction_cost >= 0 && transaction_cost < 1)) throw ConfigError("transaction_cost must be in [0, 1)");
}

namespace {

struct Leg {
    double close_t = 0, close_next = 0;
    Date next;
};

Leg find_leg(const PriceTable& prices, Date date, const std::string& ticker) {
    auto it = prices.find(ticker);
    if (it == prices.end()) throw MissingPrice(format_date(date), ticker);
    const auto& bars = it->second;
    auto bar = std::lower_bound(bars.begin(), bars.end(), date, [](const PriceBar& b, Date d) { return b.date < d; });
    if (bar == bars.end() || bar->date != date || bar + 1 == bars.end()) throw MissingPrice(format_date(date), ticker);
    return Leg{bar->close, (bar + 1)->close, (bar + 1)->date};
}

}  // namespace

PnLSeries run_buy_hold_sell(const Predictions& predictions, const PriceTable& prices, const TradingConfig& cfg) {
    cfg.validate();
    std::map<Date, std::vector<std::pair<std::string, int>>> by_date;
    for (const auto& [key, pred] : predictions) by_date[key.first].emplace_back(key.second, pred);

    PnLSeries out;
    double value = cfg.initial_value;
    out.net_values.push_back(value);
    Date last_settle{};
    for (const auto& [date, preds] : by_date) {
        out.dates.push_back(date);
        std::vector<std::pair<std::string, Leg>> longs;
        for (const auto& [ticker, pred] : preds) {
            Leg leg = find_leg(prices, date, ticker);
            last_settle = std::max(last_settle, leg.next);
            if (pred == 1) longs.emplace_back(ticker, leg);
        }
        if (!longs.empty()) {
            const double weight = 1.0 / static_cast<double>(longs.size());
            const double keep = (1.0 - cfg.transaction_cost) * (1.0 - cfg.transaction_cost);
            double next = 0;
            for (const auto& [ticker, leg] : longs) {
                double r = leg.close_next / leg.close_t - 1.0;
                next += value * weight * keep * (1.0 + r);
                out.trades.push_back(Trade{date, ticker, weight, r});
            }
            value = next;
        }
        out.net_values.push_back(value);
    }
    if (!by_date.empty()) out.dates.push_back(last_settle);
    return out;
}

PnLComparison compare_pnl(const Predictions& benign, const Predictions& attacked, const PriceTable& prices,
                          const TradingConfig& cfg) {
    if (benign.size() != attacked.size() ||
        !std::equal(benign.begin(), benign.end(), attacked.begin(),
                    [](const auto& a, const auto& b) { return a.first == b.first; }))
        throw PredictionMismatch("benign and attacked predictions cover different (date, ticker) keys");
    PnLComparison c;
    c.benign = run_buy_hold_sell(benign, prices, cfg);
    c.attacked = run_buy_hold_sell(attacked, prices, cfg);
    c.delta = c.attacked.terminal() - c.benign.terminal();
    return c;
}

double max_drawdown(const Vec& values) {
    double peak = 0, worst = 0;
    for (double v : values) {
        peak = std::max(peak, v);
        if (peak > 0) worst = std::max(worst, (peak - v) / peak);
    }
    return worst;
}

void write_pnl_csv(const std::string& path, const PnLSeries& series) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << "date,net_value\n";
    for (std::size_t k = 0; k < series.net_values.size(); ++k)
        out << (k < series.dates.size() ? format_date(series.dates[k]) : "") << ',' << format_fixed(series.net_values[k], 2)
            << '\n';
}

std::string pnl_summary_json(const PnLSeries& series, double initial_value) {
    nlohmann::ordered_json j;
    j["initial_value"] = initial_value;
    j["terminal_value"] = series.terminal();
    j["return_pct"] = 100.0 * (series.terminal() / initial_value - 1.0);
    j["max_drawdown"] = max_drawdown(series.net_values);
    j["trade_count"] = series.trades.size();
    std::vector<std::string> dates;
    for (Date d : series.dates) dates.push_back(format_date(d));
    j["dates"] = dates;
    Vec pct;
    for (double v : series.net_values) pct.push_back(100.0 * v / initial_value);
    j["net_value_pct"] = pct;
    return j.dump(2);
}

void write_predictions_csv(const std::string& path, const Predictions& predictions) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    out << "date,ticker,prediction\n";
    for (const auto& [key, pred] : predictions) out << format_date(key.first) << ',' << key.second << ',' << pred << '\n';
}

Predictions read_predictions_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingData("predictions file " + path);
    Predictions out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto text = trim(line);
        if (text.empty()) continue;
        if (lineno == 1 && text.substr(0, 4) == "date") continue;
        auto c1 = text.find(','), c2 = text.rfind(',');
        if (c1 == std::string_view::npos || c1 == c2) throw FormatError(path, lineno, "expected date,ticker,prediction");
        auto date = parse_date(trim(text.substr(0, c1)));
        auto pred = parse_int(trim(text.substr(c2 + 1)));
        if (!date || !pred || (*pred != 1 && *pred != -1)) throw FormatError(path, lineno, "bad date or prediction");
        std::string ticker(trim(text.substr(c1 + 1, c2 - c1 - 1)));
        if (!out.emplace(std::make_pair(*date, ticker), static_cast<int>(*pred)).second)
            throw FormatError(path, lineno, "duplicate (date, ticker)");
    }
    return out;
}

}  // namespace quotestorm
