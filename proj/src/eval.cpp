#include "quotestorm/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "quotestorm/util.hpp"

namespace quotestorm {

std::string solver_name(SolverKind s) {
    switch (s) {
        case SolverKind::NA: return "na";
        case SolverKind::RA: return "ra";
        case SolverKind::JO: return "jo";
        case SolverKind::AGO: return "ago";
        case SolverKind::Brute: return "brute";
    }
    return "?";
}

std::optional<SolverKind> parse_solver(std::string_view name) {
    if (name == "na") return SolverKind::NA;
    if (name == "ra") return SolverKind::RA;
    if (name == "jo") return SolverKind::JO;
    if (name == "ago") return SolverKind::AGO;
    if (name == "brute") return SolverKind::Brute;
    return std::nullopt;
}

double asr(std::span<const AttackResult> results, bool* empty) {
    if (empty) *empty = results.empty();
    if (results.empty()) return 0.0;
    std::size_t wins = 0;
    for (const auto& r : results) wins += r.success ? 1 : 0;
    return 100.0 * static_cast<double>(wins) / static_cast<double>(results.size());
}

double f1_post_attack(std::span<const AttackResult> results) {
    std::vector<int> preds, labels;
    for (const auto& r : results) {
        preds.push_back(r.post_label);
        labels.push_back(r.true_label);
    }
    return binary_metrics(preds, labels).f1;
}

void BenchmarkSpec::validate() {
    if (victims.empty() || solvers.empty() || modes.empty() || kinds.empty() || budgets.empty() || seeds.empty())
        throw ConfigError("benchmark spec has an empty axis");
    for (auto [bs, bw] : budgets)
        if (bs < 1 || bw < 1) throw ConfigError("budgets must be >= 1");
    if (n_u < 1) throw ConfigError("n_u must be >= 1");
    if (std::find(solvers.begin(), solvers.end(), SolverKind::NA) == solvers.end())
        solvers.insert(solvers.begin(), SolverKind::NA);
    solver.validate();
}

std::string ConfigKey::str() const {
    return victim + "/" + solver + "/" + mode + "/" + kind + "/" + std::to_string(b_s) + "x" + std::to_string(b_w) + "/s" +
           std::to_string(seed);
}

std::vector<const Instance*> attackable_instances(const VictimModel& model, const DatasetSplit& split,
                                                  const EmbeddingTable& table, std::size_t max_instances) {
    std::vector<const Instance*> out;
    for (const auto& inst : split.test) {
        if (inst.anchor_tweets().tweets.empty()) continue;
        if (forward(model, inst, table).label != inst.label) continue;
        out.push_back(&inst);
    }
    std::sort(out.begin(), out.end(), [](const Instance* a, const Instance* b) { return a->id < b->id; });
    if (max_instances > 0 && out.size() > max_instances) out.resize(max_instances);
    return out;
}

AttackResult attack_instance(const ConfigKey& key, const BenchmarkSpec& spec, const BenchmarkInputs& inputs,
                             const Instance& instance) {
    try {
        const VictimModel& model = *inputs.models.at(key.victim);
        AttackMode mode = parse_mode(key.mode).value_or(AttackMode::Concatenate);
        PerturbKind kind = parse_kind(key.kind).value_or(PerturbKind::Replace);
        Budgets budgets{std::max<std::size_t>(1, key.b_s), std::max<std::size_t>(1, key.b_w), spec.n_u};
        AttackProblem problem =
            make_problem(model, instance, *inputs.table, *inputs.synonyms, budgets, mode, kind, inputs.vocab);
        SolverConfig cfg = spec.solver;
        cfg.mode = mode;
        cfg.kind = kind;
        cfg.seed = key.seed;
        switch (*parse_solver(key.solver)) {
            case SolverKind::NA: return no_attack(problem);
            case SolverKind::RA: return random_attack(problem, budgets, key.seed);
            case SolverKind::JO: return solve_jo(problem, budgets, cfg);
            case SolverKind::AGO: return solve_ago(problem, budgets, cfg);
            case SolverKind::Brute: return brute_force_attack(problem, spec.brute_limit);
        }
        throw Error("unknown solver");
    } catch (const std::exception& e) {
        AttackResult r;
        r.instance_id = instance.id;
        r.stock = instance.stock;
        r.date = format_date(instance.date);
        r.solver = key.solver;
        r.mode = key.mode;
        r.kind = key.kind;
        r.true_label = instance.label;
        r.pre_label = instance.label;
        r.post_label = instance.label;
        r.success = false;
        r.error = e.what();
        return r;
    }
}

MetricsRow summarize(const ConfigKey& key, std::span<const AttackResult> results) {
    MetricsRow row;
    row.key = key;
    row.n_instances = results.size();
    row.asr = asr(results);
    row.f1_post = f1_post_attack(results);
    double q = 0, its = 0;
    std::size_t n_its = 0;
    for (const auto& r : results) {
        if (!r.error.empty()) ++row.n_errors;
        q += static_cast<double>(r.queries);
        if (r.success && r.iterations_to_success) {
            its += static_cast<double>(*r.iterations_to_success);
            ++n_its;
        }
    }
    row.mean_queries = results.empty() ? 0.0 : q / static_cast<double>(results.size());
    if (n_its) row.mean_iterations_to_success = its / static_cast<double>(n_its);
    return row;
}

namespace {

std::vector<ConfigKey> expand(const BenchmarkSpec& spec) {
    std::vector<ConfigKey> keys;
    for (const auto& victim : spec.victims) {
        keys.push_back(ConfigKey{victim, "na", "none", "none", 0, 0, 0});
        for (SolverKind s : spec.solvers) {
            if (s == SolverKind::NA) continue;
            for (AttackMode mode : spec.modes)
                for (PerturbKind kind : spec.kinds)
                    for (std::uint64_t seed : spec.seeds) {
                        if (s == SolverKind::Brute) {
                            keys.push_back(ConfigKey{victim, "brute", mode_name(mode), kind_name(kind), 1, 1, seed});
                            continue;
                        }
                        for (auto [bs, bw] : spec.budgets)
                            keys.push_back(ConfigKey{victim, solver_name(s), mode_name(mode), kind_name(kind), bs, bw, seed});
                    }
        }
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    return keys;
}

struct Task {
    std::size_t key;
    const Instance* instance;
};

struct Plan {
    std::vector<ConfigKey> keys;
    std::vector<Task> tasks;
    std::map<std::string, Predictions> benign;
};

Plan make_plan(BenchmarkSpec& spec, const BenchmarkInputs& inputs) {
    spec.validate();
    if (!inputs.split || !inputs.table || !inputs.synonyms) throw ConfigError("benchmark inputs are incomplete");
    Plan plan;
    plan.keys = expand(spec);
    std::map<std::string, std::vector<const Instance*>> eligible;
    for (const auto& victim : spec.victims) {
        auto it = inputs.models.find(victim);
        if (it == inputs.models.end() || !it->second) throw ConfigError("no model for victim " + victim);
        eligible[victim] = attackable_instances(*it->second, *inputs.split, *inputs.table, spec.max_instances);
        Predictions preds;
        for (const auto& inst : inputs.split->test)
            preds[{inst.date, inst.stock}] = forward(*it->second, inst, *inputs.table).label;
        plan.benign[victim] = std::move(preds);
    }
    for (std::size_t k = 0; k < plan.keys.size(); ++k)
        for (const Instance* inst : eligible[plan.keys[k].victim]) plan.tasks.push_back(Task{k, inst});
    return plan;
}

BenchmarkOutput aggregate(Plan& plan, std::vector<AttackResult>& results) {
    BenchmarkOutput out;
    std::vector<std::vector<AttackResult>> per_key(plan.keys.size());
    for (std::size_t t = 0; t < plan.tasks.size(); ++t) per_key[plan.tasks[t].key].push_back(std::move(results[t]));
    for (std::size_t k = 0; k < plan.keys.size(); ++k) {
        auto& rs = per_key[k];
        std::sort(rs.begin(), rs.end(), [](const AttackResult& a, const AttackResult& b) { return a.instance_id < b.instance_id; });
        const ConfigKey& key = plan.keys[k];
        out.rows.push_back(summarize(key, rs));

        std::size_t iters = 0;
        for (const auto& r : rs) iters = std::max(iters, r.trajectory.size());
        for (std::size_t it = 0; it < iters; ++it) {
            double loss = 0, wins = 0;
            std::size_t n_loss = 0;
            for (const auto& r : rs) {
                if (it < r.trajectory.size()) {
                    loss += r.trajectory[it];
                    ++n_loss;
                }
                if (it < r.success_at_iter.size() && r.success_at_iter[it]) wins += 1;
            }
            out.trajectories.push_back(TrajectoryRow{key, it + 1, n_loss ? loss / static_cast<double>(n_loss) : 0.0,
                                                     rs.empty() ? 0.0 : 100.0 * wins / static_cast<double>(rs.size())});
        }

        Predictions attacked = plan.benign.at(key.victim);
        for (const auto& r : rs) {
            auto date = parse_date(r.date);
            if (date) attacked[{*date, r.stock}] = r.post_label;
        }
        out.attacked_predictions[key] = std::move(attacked);
        for (auto& r : rs) out.results.emplace_back(key, std::move(r));
    }
    out.benign_predictions = std::move(plan.benign);
    return out;
}

}  // namespace

BenchmarkOutput run_benchmark(BenchmarkSpec spec, const BenchmarkInputs& inputs) {
    Plan plan = make_plan(spec, inputs);
    std::vector<AttackResult> results(plan.tasks.size());
    const auto n = static_cast<std::ptrdiff_t>(plan.tasks.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t t = 0; t < n; ++t) {
        const Task& task = plan.tasks[static_cast<std::size_t>(t)];
        results[static_cast<std::size_t>(t)] = attack_instance(plan.keys[task.key], spec, inputs, *task.instance);
    }
    return aggregate(plan, results);
}

BenchmarkOutput run_benchmark_serial(BenchmarkSpec spec, const BenchmarkInputs& inputs) {
    Plan plan = make_plan(spec, inputs);
    std::vector<AttackResult> results;
    for (const Task& task : plan.tasks) results.push_back(attack_instance(plan.keys[task.key], spec, inputs, *task.instance));
    return aggregate(plan, results);
}

// ------------------------------------------------------------- writers

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path);
    return out;
}

std::string key_columns(const ConfigKey& k) {
    return k.str() + "," + k.victim + "," + k.solver + "," + k.mode + "," + k.kind + "," + std::to_string(k.b_s) + "," +
           std::to_string(k.b_w) + "," + std::to_string(k.seed);
}

std::vector<std::string> split_csv(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        auto c = line.find(',', start);
        out.emplace_back(line.substr(start, c == std::string_view::npos ? std::string_view::npos : c - start));
        if (c == std::string_view::npos) break;
        start = c + 1;
    }
    return out;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    auto out = open_out(path);
    out << "config,victim,solver,mode,kind,b_s,b_w,seed,n_instances,n_errors,asr_pct,f1_post_binary_up,mean_queries,"
           "mean_iterations_to_success\n";
    for (const auto& r : rows) {
        out << key_columns(r.key) << ',' << r.n_instances << ',' << r.n_errors << ',' << format_fixed(r.asr, 4) << ','
            << format_fixed(r.f1_post, 6) << ',' << format_fixed(r.mean_queries, 3) << ','
            << (r.mean_iterations_to_success ? format_fixed(*r.mean_iterations_to_success, 3) : "") << '\n';
    }
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MissingData("metrics file " + path);
    std::vector<MetricsRow> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1 || trim(line).empty()) continue;
        auto f = split_csv(trim(line));
        if (f.size() != 14) throw FormatError(path, lineno, "expected 14 columns");
        MetricsRow r;
        r.key.victim = f[1];
        r.key.solver = f[2];
        r.key.mode = f[3];
        r.key.kind = f[4];
        auto bs = parse_int(f[5]), bw = parse_int(f[6]), seed = parse_int(f[7]), n = parse_int(f[8]), ne = parse_int(f[9]);
        auto a = parse_double(f[10]), f1 = parse_double(f[11]), q = parse_double(f[12]);
        if (!bs || !bw || !seed || !n || !ne || !a || !f1 || !q) throw FormatError(path, lineno, "bad number");
        r.key.b_s = static_cast<std::size_t>(*bs);
        r.key.b_w = static_cast<std::size_t>(*bw);
        r.key.seed = static_cast<std::uint64_t>(*seed);
        r.n_instances = static_cast<std::size_t>(*n);
        r.n_errors = static_cast<std::size_t>(*ne);
        r.asr = *a;
        r.f1_post = *f1;
        r.mean_queries = *q;
        if (!f[13].empty()) r.mean_iterations_to_success = parse_double(f[13]);
        rows.push_back(r);
    }
    return rows;
}

void write_trajectories_csv(const std::string& path, const std::vector<TrajectoryRow>& rows) {
    auto out = open_out(path);
    out << "config,iteration,mean_normalized_loss,asr_at_iter_pct\n";
    for (const auto& r : rows)
        out << r.key.str() << ',' << r.iteration << ',' << format_fixed(r.mean_normalized_loss, 6) << ','
            << format_fixed(r.asr_at_iter, 4) << '\n';
}

void write_budget_curves_csv(const std::string& path, const std::vector<MetricsRow>& rows) {
    auto out = open_out(path);
    out << "victim,solver,mode,kind,seed,b_s,b_w,asr_pct\n";
    for (const auto& r : rows) {
        if (r.key.solver == "na" || r.key.solver == "brute") continue;
        out << r.key.victim << ',' << r.key.solver << ',' << r.key.mode << ',' << r.key.kind << ',' << r.key.seed << ','
            << r.key.b_s << ',' << r.key.b_w << ',' << format_fixed(r.asr, 4) << '\n';
    }
}

void write_results_jsonl(const std::string& path, const std::vector<std::pair<ConfigKey, AttackResult>>& results) {
    auto out = open_out(path);
    for (const auto& [key, r] : results) {
        nlohmann::ordered_json j;
        j["schema"] = kResultSchema;
        j["config"] = key.str();
        j["instance_id"] = r.instance_id;
        j["stock"] = r.stock;
        j["date"] = r.date;
        j["solver"] = key.solver;
        j["mode"] = key.mode;
        j["kind"] = key.kind;
        j["b_s"] = key.b_s;
        j["b_w"] = key.b_w;
        j["seed"] = key.seed;
        j["true_label"] = r.true_label;
        j["pre_label"] = r.pre_label;
        j["post_label"] = r.post_label;
        j["pre_logit"] = r.pre_logit;
        j["post_logit"] = r.post_logit;
        j["objective"] = r.objective;
        j["success"] = r.success;
        j["queries"] = r.queries;
        j["iterations_to_success"] = r.iterations_to_success ? nlohmann::ordered_json(*r.iterations_to_success) : nullptr;
        j["selected_tweets"] = r.perturbation.tweets;
        auto edits = nlohmann::ordered_json::array();
        for (const auto& per_tweet : r.perturbation.edits) {
            auto row = nlohmann::ordered_json::array();
            for (auto [pos, tok] : per_tweet) row.push_back({pos, tok});
            edits.push_back(row);
        }
        j["edits"] = edits;
        j["original_texts"] = r.original_texts;
        j["adversarial_texts"] = r.adversarial_texts;
        j["trajectory"] = r.trajectory;
        j["success_at_iter"] = r.success_at_iter;
        j["error"] = r.error;
        out << j.dump() << '\n';
    }
}

std::string format_summary(const std::vector<MetricsRow>& rows) {
    std::ostringstream s;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-8s %-6s %-12s %-8s %-7s %5s %9s %7s %6s\n", "victim", "solver", "mode", "kind",
                  "budget", "seed", "ASR(%)", "F1", "n");
    s << buf;
    for (const auto& r : rows) {
        std::string budget = r.key.solver == "na" ? "-" : std::to_string(r.key.b_s) + "," + std::to_string(r.key.b_w);
        std::snprintf(buf, sizeof buf, "%-8s %-6s %-12s %-8s %-7s %5llu %9.1f %7.3f %6zu\n", r.key.victim.c_str(),
                      r.key.solver.c_str(), r.key.mode.c_str(), r.key.kind.c_str(), budget.c_str(),
                      static_cast<unsigned long long>(r.key.seed), r.asr, r.f1_post, r.n_instances);
        s << buf;
    }
    return s.str();
}

std::string report_columns_markdown() {
    return R"(### Report columns

`metrics.csv`, one row per attack configuration:

| column | meaning |
|---|---|
| `config` | `victim/solver/mode/kind/b_sxb_w/s<seed>` |
| `victim` | `bag`, `fingru` or `finlstm` |
| `solver` | `na` (no attack), `ra` (random), `jo`, `ago`, `brute` |
| `mode` | `concatenate` or `manipulate` (`none` for `na`) |
| `kind` | `replace` or `delete` (`none` for `na`) |
| `b_s`, `b_w` | tweet and word budgets (0 for `na`) |
| `seed` | solver seed (0 for `na`) |
| `n_instances` | correctly classified test instances attacked |
| `n_errors` | instances where the solver failed; counted as unsuccessful |
| `asr_pct` | attack success rate, 100 * flipped / attacked |
| `f1_post_binary_up` | binary F1 (up is the positive class) of post-attack predictions on the attacked instances |
| `mean_queries` | mean victim evaluations per instance |
| `mean_iterations_to_success` | mean first iteration whose discretized iterate flips the prediction, over successful JO/AGO instances; empty otherwise |

`trajectories.csv`, one row per JO/AGO configuration and iteration 1..N:

| column | meaning |
|---|---|
| `config` | as above |
| `iteration` | 1..N |
| `mean_normalized_loss` | mean over instances of the relaxed attack loss divided by the loss at the starting point |
| `asr_at_iter_pct` | percentage of instances whose discretized iterate flips the prediction at this iteration |

`budget_curves.csv`: `victim,solver,mode,kind,seed,b_s,b_w,asr_pct`, one row per budget of each RA/JO/AGO configuration.

`results.jsonl`: one JSON object per (configuration, instance) with `schema` = `quotestorm.attack_result/1`, the config fields, `instance_id`, `stock`, `date`, `true_label`, `pre_label`, `post_label`, `pre_logit`, `post_logit`, `objective` (cross-entropy of the true label after the attack), `success`, `queries`, `iterations_to_success`, `selected_tweets` (indices into the day's tweets), `edits` (per selected tweet, `[position, token id]` pairs; token 0 is a deletion), `original_texts`, `adversarial_texts`, `trajectory`, `success_at_iter` and `error`.

`predictions/*.csv`: `date,ticker,prediction` over the whole test split; `benign_<victim>.csv` before attack and one file per configuration with the attacked instances replaced by their post-attack prediction.
)";
}

}  // namespace quotestorm
