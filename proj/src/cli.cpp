#include "quotestorm/cli.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>

#include <omp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "quotestorm/eval.hpp"
#include "quotestorm/util.hpp"

namespace quotestorm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Every flag is registered with the JSON key that can set it from a config
// file: "<subcommand>.<flag>" or "<flag>" for global flags.
class Registry {
public:
    template <class T>
    CLI::Option* add(CLI::App* app, const std::string& scope, const std::string& name, T& var, const std::string& desc) {
        CLI::Option* opt = app->add_option("--" + name, var, desc)->capture_default_str();
        items_.push_back(Binding{scope, name, opt, [&var](const json& j) { var = j.get<T>(); }});
        return opt;
    }

    CLI::Option* flag(CLI::App* app, const std::string& scope, const std::string& name, bool& var, const std::string& desc) {
        CLI::Option* opt = app->add_flag("--" + name, var, desc);
        items_.push_back(Binding{scope, name, opt, [&var](const json& j) { var = j.get<bool>(); }});
        return opt;
    }

    // Rejects unknown keys; applies the ones of `scope` (and globals) whose
    // flag was not given on the command line.
    void apply(const json& doc, const std::string& scope) const {
        if (!doc.is_object()) throw ConfigError("config file must hold a flat JSON object");
        for (const auto& [key, value] : doc.items()) {
            auto dot = key.find('.');
            std::string s = dot == std::string::npos ? "" : key.substr(0, dot);
            std::string name = dot == std::string::npos ? key : key.substr(dot + 1);
            const Binding* b = nullptr;
            for (const auto& item : items_)
                if (item.scope == s && item.name == name) b = &item;
            if (!b) throw ConfigError("unknown config key '" + key + "'");
            if ((s.empty() || s == scope) && b->opt->count() == 0) {
                try {
                    b->set(value);
                } catch (const json::exception& e) {
                    throw ConfigError("config key '" + key + "': " + e.what());
                }
            }
        }
    }

private:
    struct Binding {
        std::string scope, name;
        CLI::Option* opt;
        std::function<void(const json&)> set;
    };
    std::vector<Binding> items_;
};

struct Globals {
    std::string config;
    std::uint64_t seed = 42;
    int jobs = 0;
};

void add_dataset_flags(Registry& reg, CLI::App* app, const std::string& scope, DatasetConfig& d) {
    reg.add(app, scope, "window", d.window, "Look-back window h (the model reads h+1 days)");
    reg.add(app, scope, "max-tweets-per-day", d.max_tweets_per_day, "Most recent tweets kept per day");
    reg.add(app, scope, "max-tweet-len", d.max_tweet_len, "Tokens kept per tweet");
    reg.add(app, scope, "n-periods", d.n_periods, "Rolling periods of the train/test split");
    reg.add(app, scope, "train-fraction", d.train_fraction, "Share of each period's dates used for training");
    reg.add(app, scope, "max-gap-days", d.max_gap_days, "Calendar gap that counts as a missing trading day");
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw Error("cannot create directory " + dir + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
}

std::vector<std::string> expand_victims(const std::string& spec) {
    if (spec == "all") return {"bag", "fingru", "finlstm"};
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= spec.size()) {
        auto c = spec.find(',', start);
        std::string name(trim(std::string_view(spec).substr(start, c == std::string::npos ? std::string::npos : c - start)));
        if (!parse_victim(name)) throw ConfigError("unknown victim '" + name + "'");
        out.push_back(victim_name(*parse_victim(name)));
        if (c == std::string::npos) break;
        start = c + 1;
    }
    return out;
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
    std::vector<std::string> out;
    for (const auto& item : items) {
        std::size_t start = 0;
        while (true) {
            auto c = item.find(',', start);
            std::string v(trim(std::string_view(item).substr(start, c == std::string::npos ? std::string::npos : c - start)));
            if (!v.empty()) out.push_back(v);
            if (c == std::string::npos) break;
            start = c + 1;
        }
    }
    return out;
}

struct LoadedData {
    Lexicon lexicon;
    DatasetSplit split;
};

LoadedData load_data(const std::string& data_dir, const std::string& embeddings, const DatasetConfig& dcfg) {
    if (!fs::is_directory(data_dir)) throw MissingData("dataset directory " + data_dir);
    LoadedData d;
    d.lexicon = load_embeddings(embeddings.empty() ? (fs::path(data_dir) / "embeddings.txt").string() : embeddings);
    d.split = load_stocknet_dir(data_dir, d.lexicon.vocab, dcfg);
    return d;
}

// ------------------------------------------------------------ gen-data

struct GenArgs {
    std::string out;
    bool force = false;
    SynthConfig synth;
    DatasetConfig dataset;
};

void cmd_gen_data(const GenArgs& a, const Globals& g) {
    if (a.out.empty()) throw ConfigError("--out is required");
    if (fs::exists(a.out) && !fs::is_empty(a.out)) {
        if (!a.force) throw RefusingOverwrite(a.out);
        fs::remove_all(a.out);
    }
    SyntheticData data = gen_synthetic(a.synth, g.seed, a.dataset);
    ensure_dir(a.out);
    write_stocknet_dir(a.out, data.market);
    save_embeddings((fs::path(a.out) / "embeddings.txt").string(), data.lexicon);

    json manifest;
    manifest["format"] = "quotestorm-synthetic";
    manifest["seed"] = g.seed;
    const auto& s = a.synth;
    manifest["synth"] = {{"n_stocks", s.n_stocks},
                         {"n_days", s.n_days},
                         {"signal_strength", s.signal_strength},
                         {"sentiment_magnitude", s.sentiment_magnitude},
                         {"return_noise", s.return_noise},
                         {"polarity_agreement", s.polarity_agreement},
                         {"sentiment_persistence", s.sentiment_persistence},
                         {"dim", s.dim},
                         {"n_clusters", s.n_clusters},
                         {"cluster_size", s.cluster_size},
                         {"n_noise_words", s.n_noise_words},
                         {"n_u", s.n_u},
                         {"strength_spread", s.strength_spread},
                         {"noise_word_scale", s.noise_word_scale},
                         {"quiet_day_prob", s.quiet_day_prob},
                         {"quiet_min", s.quiet_min},
                         {"quiet_max", s.quiet_max},
                         {"busy_min", s.busy_min},
                         {"busy_max", s.busy_max},
                         {"start_date", s.start_date}};
    manifest["counts"] = {{"stocks", data.market.stocks.size()},
                          {"trading_days", s.n_days},
                          {"train_instances", data.split.train.size()},
                          {"test_instances", data.split.test.size()},
                          {"instances", data.split.train.size() + data.split.test.size()},
                          {"vocab_size", data.lexicon.vocab.size()}};
    manifest["vocab_hash"] = data.lexicon.vocab.hash();
    write_text(fs::path(a.out) / "manifest.json", manifest.dump(2) + "\n");
    std::cout << "wrote " << a.out << ": " << data.market.stocks.size() << " stocks, " << data.split.train.size()
              << " train / " << data.split.test.size() << " test instances\n";
}

// --------------------------------------------------------------- train

struct TrainArgs {
    std::string data, embeddings, out = "checkpoints", victim = "fingru";
    std::size_t hidden = 32;
    TrainConfig train;
    DatasetConfig dataset;
};

json metrics_json(const BinaryMetrics& m) { return {{"n", m.n}, {"accuracy", m.accuracy}, {"f1", m.f1}}; }

void cmd_train(TrainArgs a, const Globals& g) {
    if (a.data.empty()) throw ConfigError("--data is required");
    auto victims = expand_victims(a.victim);
    LoadedData d = load_data(a.data, a.embeddings, a.dataset);
    ensure_dir(a.out);
    a.train.seed = g.seed;
    json report = json::object();
    for (const auto& name : victims) {
        VictimHyper h;
        h.embed_dim = d.lexicon.table.dim();
        h.hidden = a.hidden;
        h.window = a.dataset.window;
        auto model = make_victim(*parse_victim(name), h, mix_seed(g.seed, hash_string(name)));
        TrainReport r = train(*model, d.split, d.lexicon.table, a.train);
        save_checkpoint((fs::path(a.out) / (name + ".json")).string(), *model, d.lexicon.vocab.hash());
        report[name] = {{"best_epoch", r.best_epoch},
                        {"train", metrics_json(r.train)},
                        {"test", metrics_json(r.test)},
                        {"selection", metrics_json(r.selection)}};
        std::cout << name << ": best epoch " << r.best_epoch << ", train acc " << format_fixed(r.train.accuracy, 4)
                  << ", test acc " << format_fixed(r.test.accuracy, 4) << ", test F1 " << format_fixed(r.test.f1, 4) << "\n";
    }
    write_text(fs::path(a.out) / "train_report.json", report.dump(2) + "\n");
}

// -------------------------------------------------------------- attack

struct AttackArgs {
    std::string data, embeddings, checkpoints = "checkpoints", out, victim = "fingru";
    std::vector<std::string> solvers{"jo"}, budgets{"1,1"}, modes{"concatenate"}, kinds{"replace"};
    std::vector<std::uint64_t> seeds;
    std::size_t n_u = 5, max_instances = 0, max_size = kBruteForceLimit;
    SolverConfig solver;
    DatasetConfig dataset;
};

std::string file_key(const ConfigKey& k) {
    std::string s = k.str();
    for (char& c : s)
        if (c == '/') c = '_';
    return s;
}

void cmd_attack(const AttackArgs& a, const Globals& g) {
    if (a.data.empty()) throw ConfigError("--data is required");
    if (a.out.empty()) throw ConfigError("--out is required");
    BenchmarkSpec spec;
    spec.victims = expand_victims(a.victim);
    spec.solvers.clear();
    for (const auto& s : split_list(a.solvers)) {
        if (s == "all") {
            for (auto k : {SolverKind::NA, SolverKind::RA, SolverKind::JO, SolverKind::AGO}) spec.solvers.push_back(k);
            continue;
        }
        auto k = parse_solver(s);
        if (!k) throw ConfigError("unknown solver '" + s + "'");
        spec.solvers.push_back(*k);
    }
    spec.modes.clear();
    for (const auto& m : split_list(a.modes)) {
        auto v = parse_mode(m);
        if (!v) throw ConfigError("unknown mode '" + m + "'");
        spec.modes.push_back(*v);
    }
    spec.kinds.clear();
    for (const auto& k : split_list(a.kinds)) {
        auto v = parse_kind(k);
        if (!v) throw ConfigError("unknown kind '" + k + "'");
        spec.kinds.push_back(*v);
    }
    spec.budgets.clear();
    for (const auto& b : a.budgets) {
        auto c = b.find(',');
        auto bs = c == std::string::npos ? std::nullopt : parse_int(trim(std::string_view(b).substr(0, c)));
        auto bw = c == std::string::npos ? std::nullopt : parse_int(trim(std::string_view(b).substr(c + 1)));
        if (!bs || !bw || *bs < 1 || *bw < 1) throw ConfigError("budget must look like b_s,b_w with both >= 1, got '" + b + "'");
        spec.budgets.emplace_back(static_cast<std::size_t>(*bs), static_cast<std::size_t>(*bw));
    }
    spec.seeds = a.seeds.empty() ? std::vector<std::uint64_t>{g.seed} : a.seeds;
    spec.n_u = a.n_u;
    spec.solver = a.solver;
    spec.max_instances = a.max_instances;
    spec.brute_limit = a.max_size;

    LoadedData d = load_data(a.data, a.embeddings, a.dataset);
    std::map<std::string, std::unique_ptr<VictimModel>> owned;
    BenchmarkInputs in;
    for (const auto& name : spec.victims) {
        fs::path path = fs::path(a.checkpoints) / (name + ".json");
        if (!fs::exists(path)) throw MissingData("checkpoint " + path.string() + " (run `quotestorm train` first)");
        owned[name] = load_checkpoint(path.string(), d.lexicon.vocab.hash());
        in.models[name] = owned[name].get();
    }
    std::vector<TokenId> ids;
    for (std::size_t i = 1; i < d.lexicon.vocab.size(); ++i) ids.push_back(static_cast<TokenId>(i));
    SynonymTable synonyms = build_synonym_table(d.lexicon.table, ids, a.n_u);
    in.split = &d.split;
    in.table = &d.lexicon.table;
    in.vocab = &d.lexicon.vocab;
    in.synonyms = &synonyms;

    BenchmarkOutput out = run_benchmark(spec, in);

    ensure_dir(a.out);
    fs::path dir(a.out);
    write_metrics_csv((dir / "metrics.csv").string(), out.rows);
    write_trajectories_csv((dir / "trajectories.csv").string(), out.trajectories);
    write_budget_curves_csv((dir / "budget_curves.csv").string(), out.rows);
    write_results_jsonl((dir / "results.jsonl").string(), out.results);
    ensure_dir((dir / "predictions").string());
    for (const auto& [victim, preds] : out.benign_predictions)
        write_predictions_csv((dir / "predictions" / ("benign_" + victim + ".csv")).string(), preds);
    for (const auto& [key, preds] : out.attacked_predictions)
        if (key.solver != "na") write_predictions_csv((dir / "predictions" / (file_key(key) + ".csv")).string(), preds);
    std::cout << format_summary(out.rows);
}

// ------------------------------------------------------------ simulate

struct SimArgs {
    std::string data, benign, attacked, out;
    TradingConfig trading;
};

void cmd_simulate(const SimArgs& a) {
    if (a.data.empty() || a.benign.empty()) throw ConfigError("--data and --benign are required");
    MarketData market = read_stocknet_dir(a.data);
    PriceTable prices;
    for (const auto& s : market.stocks) prices[s.ticker] = s.bars;
    Predictions benign = read_predictions_csv(a.benign);
    std::string dir = a.out.empty() ? "." : a.out;
    ensure_dir(dir);
    json summary;
    if (a.attacked.empty()) {
        PnLSeries s = run_buy_hold_sell(benign, prices, a.trading);
        write_pnl_csv((fs::path(dir) / "pnl_benign.csv").string(), s);
        summary["benign"] = json::parse(pnl_summary_json(s, a.trading.initial_value));
        std::cout << "benign terminal value " << format_fixed(s.terminal(), 2) << "\n";
    } else {
        Predictions attacked = read_predictions_csv(a.attacked);
        PnLComparison c = compare_pnl(benign, attacked, prices, a.trading);
        write_pnl_csv((fs::path(dir) / "pnl_benign.csv").string(), c.benign);
        write_pnl_csv((fs::path(dir) / "pnl_attacked.csv").string(), c.attacked);
        summary["benign"] = json::parse(pnl_summary_json(c.benign, a.trading.initial_value));
        summary["attacked"] = json::parse(pnl_summary_json(c.attacked, a.trading.initial_value));
        summary["delta"] = c.delta;
        std::cout << "benign terminal value " << format_fixed(c.benign.terminal(), 2) << ", attacked "
                  << format_fixed(c.attacked.terminal(), 2) << ", delta " << format_fixed(c.delta, 2) << "\n";
    }
    summary["transaction_cost"] = a.trading.transaction_cost;
    write_text(fs::path(dir) / "pnl_summary.json", summary.dump(2) + "\n");
}

// -------------------------------------------------------------- report

void cmd_report(const std::string& in) {
    if (in.empty()) throw ConfigError("--in is required");
    auto rows = read_metrics_csv((fs::path(in) / "metrics.csv").string());
    std::string table = format_summary(rows);
    std::cout << table;
    write_text(fs::path(in) / "REPORT.md", "# Attack report\n\n```\n" + table + "```\n\n" + report_columns_markdown());
}

}  // namespace

int run_cli(int argc, char** argv) {
    CLI::App app{"quotestorm: adversarial tweet attacks on stock movement predictors"};
    app.require_subcommand(1);
    app.fallthrough();
    Registry reg;
    Globals g;
    g.jobs = omp_get_num_procs();
    app.add_option("--config", g.config, "Flat JSON config with dotted keys (<subcommand>.<flag>)");
    reg.add(&app, "", "seed", g.seed, "Global seed (env QUOTESTORM_SEED overrides the config file)");
    reg.add(&app, "", "jobs", g.jobs, "Worker threads");

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset in StockNet layout");
    reg.add(gen_cmd, "gen-data", "out", gen.out, "Output directory");
    reg.flag(gen_cmd, "gen-data", "force", gen.force, "Replace a non-empty output directory");
    reg.add(gen_cmd, "gen-data", "n-stocks", gen.synth.n_stocks, "Number of stocks");
    reg.add(gen_cmd, "gen-data", "n-days", gen.synth.n_days, "Trading days per stock");
    reg.add(gen_cmd, "gen-data", "signal-strength", gen.synth.signal_strength, "Weight of sentiment in returns, in [0, 1]");
    reg.add(gen_cmd, "gen-data", "sentiment-magnitude", gen.synth.sentiment_magnitude, "Return shift of one sentiment unit");
    reg.add(gen_cmd, "gen-data", "return-noise", gen.synth.return_noise, "Std of the return noise");
    reg.add(gen_cmd, "gen-data", "polarity-agreement", gen.synth.polarity_agreement,
            "Probability a tweet's sentiment word matches tomorrow's sentiment");
    reg.add(gen_cmd, "gen-data", "sentiment-persistence", gen.synth.sentiment_persistence,
            "Probability a day's sentiment repeats the previous day's");
    reg.add(gen_cmd, "gen-data", "dim", gen.synth.dim, "Embedding dimension");
    reg.add(gen_cmd, "gen-data", "n-clusters", gen.synth.n_clusters, "Sentiment word clusters per polarity");
    reg.add(gen_cmd, "gen-data", "cluster-size", gen.synth.cluster_size, "Words per cluster");
    reg.add(gen_cmd, "gen-data", "n-noise-words", gen.synth.n_noise_words, "Neutral vocabulary size");
    reg.add(gen_cmd, "gen-data", "n-u", gen.synth.n_u, "Synonym neighborhood that must reach the opposite polarity");
    reg.add(gen_cmd, "gen-data", "strength-spread", gen.synth.strength_spread, "Sentiment word norms span [1/s, s]");
    reg.add(gen_cmd, "gen-data", "noise-word-scale", gen.synth.noise_word_scale, "Norm of neutral word vectors");
    reg.add(gen_cmd, "gen-data", "quiet-day-prob", gen.synth.quiet_day_prob, "Probability of a quiet day");
    reg.add(gen_cmd, "gen-data", "quiet-min", gen.synth.quiet_min, "Fewest tweets on a quiet day");
    reg.add(gen_cmd, "gen-data", "quiet-max", gen.synth.quiet_max, "Most tweets on a quiet day");
    reg.add(gen_cmd, "gen-data", "busy-min", gen.synth.busy_min, "Fewest tweets on a busy day");
    reg.add(gen_cmd, "gen-data", "busy-max", gen.synth.busy_max, "Most tweets on a busy day");
    reg.add(gen_cmd, "gen-data", "start-date", gen.synth.start_date, "First calendar day (YYYY-MM-DD)");
    add_dataset_flags(reg, gen_cmd, "gen-data", gen.dataset);

    TrainArgs tr;
    auto* train_cmd = app.add_subcommand("train", "Train victim models");
    reg.add(train_cmd, "train", "data", tr.data, "Dataset directory");
    reg.add(train_cmd, "train", "embeddings", tr.embeddings, "Embedding file (default <data>/embeddings.txt)");
    reg.add(train_cmd, "train", "out", tr.out, "Checkpoint directory");
    reg.add(train_cmd, "train", "victim", tr.victim, "bag, fingru, finlstm, a comma list or all");
    reg.add(train_cmd, "train", "lr", tr.train.lr, "Adam learning rate");
    reg.add(train_cmd, "train", "epochs", tr.train.epochs, "Training epochs");
    reg.add(train_cmd, "train", "batch-size", tr.train.batch_size, "Mini-batch size");
    reg.add(train_cmd, "train", "beta1", tr.train.beta1, "Adam first-moment decay");
    reg.add(train_cmd, "train", "beta2", tr.train.beta2, "Adam second-moment decay");
    reg.add(train_cmd, "train", "hidden", tr.hidden, "Recurrent hidden size");
    reg.add(train_cmd, "train", "holdout-fraction", tr.train.holdout_fraction,
            "Trailing share of train used to pick the checkpoint (0 picks on test)");
    add_dataset_flags(reg, train_cmd, "train", tr.dataset);

    AttackArgs at;
    auto* attack_cmd = app.add_subcommand("attack", "Run the attack benchmark grid");
    reg.add(attack_cmd, "attack", "data", at.data, "Dataset directory");
    reg.add(attack_cmd, "attack", "embeddings", at.embeddings, "Embedding file (default <data>/embeddings.txt)");
    reg.add(attack_cmd, "attack", "checkpoints", at.checkpoints, "Checkpoint directory");
    reg.add(attack_cmd, "attack", "out", at.out, "Report directory");
    reg.add(attack_cmd, "attack", "victim", at.victim, "bag, fingru, finlstm, a comma list or all");
    reg.add(attack_cmd, "attack", "solver", at.solvers, "na, ra, jo, ago, brute or all (repeatable, comma lists)");
    reg.add(attack_cmd, "attack", "budget", at.budgets, "Budget b_s,b_w (repeatable)");
    reg.add(attack_cmd, "attack", "mode", at.modes, "concatenate and/or manipulate");
    reg.add(attack_cmd, "attack", "kind", at.kinds, "replace and/or delete");
    reg.add(attack_cmd, "attack", "seeds", at.seeds, "Solver seeds (default: the global seed)");
    reg.add(attack_cmd, "attack", "n-u", at.n_u, "Synonym candidates per word");
    reg.add(attack_cmd, "attack", "iterations", at.solver.iterations, "Solver iterations");
    reg.add(attack_cmd, "attack", "eta-m", at.solver.eta_m, "Step size for tweet selection");
    reg.add(attack_cmd, "attack", "eta-z", at.solver.eta_z, "Step size for word selection");
    reg.add(attack_cmd, "attack", "eta-u", at.solver.eta_u, "Step size for replacement logits");
    reg.add(attack_cmd, "attack", "lambda", at.solver.lambda, "Sparsity weight (0 disables)");
    reg.flag(attack_cmd, "attack", "smoothing", at.solver.smoothing, "Average the loss over noisy copies of the variables");
    reg.add(attack_cmd, "attack", "sigma", at.solver.sigma, "Smoothing noise std");
    reg.add(attack_cmd, "attack", "samples", at.solver.n_samples, "Smoothing evaluations");
    reg.add(attack_cmd, "attack", "ago-u-steps", at.solver.ago_u_steps, "AGO gradient steps on replacements per round");
    reg.add(attack_cmd, "attack", "max-instances", at.max_instances, "Attack at most this many instances per victim (0 = all)");
    reg.add(attack_cmd, "attack", "max-size", at.max_size, "Brute-force combination limit");
    add_dataset_flags(reg, attack_cmd, "attack", at.dataset);

    SimArgs sim;
    auto* sim_cmd = app.add_subcommand("simulate", "Long-only buy-hold-sell PnL of prediction files");
    reg.add(sim_cmd, "simulate", "data", sim.data, "Dataset directory (prices)");
    reg.add(sim_cmd, "simulate", "benign", sim.benign, "Benign predictions CSV");
    reg.add(sim_cmd, "simulate", "attacked", sim.attacked, "Attacked predictions CSV");
    reg.add(sim_cmd, "simulate", "out", sim.out, "Output directory");
    reg.add(sim_cmd, "simulate", "initial-value", sim.trading.initial_value, "Starting net value");
    reg.add(sim_cmd, "simulate", "transaction-cost", sim.trading.transaction_cost, "Cost per side as a fraction");

    std::string report_in;
    auto* report_cmd = app.add_subcommand("report", "Summarize an attack report directory");
    reg.add(report_cmd, "report", "in", report_in, "Directory written by `attack`");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        CLI::App* sub = app.get_subcommands().front();
        if (!g.config.empty()) {
            std::ifstream in(g.config);
            if (!in) throw ConfigError("cannot read config file " + g.config);
            json doc;
            try {
                doc = json::parse(in);
            } catch (const json::exception& e) {
                throw ConfigError("config file " + g.config + ": " + e.what());
            }
            reg.apply(doc, sub->get_name());
        }
        if (const char* env = std::getenv("QUOTESTORM_SEED"); env && app.get_option("--seed")->count() == 0) {
            auto v = parse_int(env);
            if (!v || *v < 0) throw ConfigError("QUOTESTORM_SEED must be a non-negative integer");
            g.seed = static_cast<std::uint64_t>(*v);
        }
        if (g.jobs < 1) throw ConfigError("--jobs must be >= 1");
        omp_set_num_threads(g.jobs);

        if (sub == gen_cmd) cmd_gen_data(gen, g);
        if (sub == train_cmd) cmd_train(tr, g);
        if (sub == attack_cmd) cmd_attack(at, g);
        if (sub == sim_cmd) cmd_simulate(sim);
        if (sub == report_cmd) cmd_report(report_in);
        return 0;
    } catch (const TrainingDiverged& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const MissingData& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const IncompatibleArtifacts& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const RefusingOverwrite& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const PredictionMismatch& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const MissingPrice& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace quotestorm
