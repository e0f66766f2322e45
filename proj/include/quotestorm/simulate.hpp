#ifndef QUOTESTORM_SIMULATE_HPP
#define QUOTESTORM_SIMULATE_HPP

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "quotestorm/dataset.hpp"

namespace quotestorm {

struct TradingConfig {
    double initial_value = 10000.0;
    double transaction_cost = 0.0;  // fraction of traded value, charged on buy and on sell

    void validate() const;
};

struct Trade {
    Date date;
    std::string ticker;
    double weight = 0;
    double realized_return = 0;  // close(t+1)/close(t) - 1, before costs
};

// net_values[0] is the starting value on dates[0]; net_values[k] is the
// value after the trades of dates[k-1] settle. dates has one more entry than
// there are prediction dates: the last is the final settlement day.
struct PnLSeries {
    std::vector<Date> dates;
    Vec net_values;
    std::vector<Trade> trades;

    double terminal() const { return net_values.empty() ? 0.0 : net_values.back(); }
};

// +1 / -1 per (date, ticker)
using Predictions = std::map<std::pair<Date, std::string>, int>;
using PriceTable = std::map<std::string, std::vector<PriceBar>>;

// Long-only buy-hold-sell: on each prediction date, buy the predicted-up
// stocks at the close with equal weights and sell at the next close. Throws
// MissingPrice when a predicted stock lacks the close on t or t+1.
PnLSeries run_buy_hold_sell(const Predictions& predictions, const PriceTable& prices, const TradingConfig& cfg);

struct PnLComparison {
    PnLSeries benign, attacked;
    double delta = 0;  // attacked terminal - benign terminal
};

// Throws PredictionMismatch unless both sets cover the same keys.
PnLComparison compare_pnl(const Predictions& benign, const Predictions& attacked, const PriceTable& prices,
                          const TradingConfig& cfg);

// Largest peak-to-trough fall as a fraction of the peak.
double max_drawdown(const Vec& values);

void write_pnl_csv(const std::string& path, const PnLSeries& series);
// Terminal value, return, max drawdown, trade count and the series in percent of the initial value.
std::string pnl_summary_json(const PnLSeries& series, double initial_value);

// `date,ticker,prediction` rows.
void write_predictions_csv(const std::string& path, const Predictions& predictions);
Predictions read_predictions_csv(const std::string& path);

}  // namespace quotestorm

#endif  // QUOTESTORM_SIMULATE_HPP
