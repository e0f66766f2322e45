#include "quotestorm/attack.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "quotestorm/util.hpp"

namespace quotestorm {

void Budgets::validate() const {
    if (tweets < 1 || words < 1 || candidates < 1) throw ConfigError("budgets b_s, b_w and n_u must all be >= 1");
}

void SolverConfig::validate() const {
    if (iterations < 1) throw ConfigError("solver iterations must be >= 1");
    if (!(sigma >= 0)) throw ConfigError("smoothing sigma must be >= 0");
    if (n_samples < 1) throw ConfigError("smoothing n_samples must be >= 1");
    if (!(eta_m >= 0 && eta_z >= 0 && eta_u >= 0)) throw ConfigError("step sizes must be >= 0");
    if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
}

namespace {

Vec softmax(const Vec& x) {
    Vec out(x.size());
    if (x.empty()) return out;
    double mx = *std::max_element(x.begin(), x.end());
    double z = 0;
    for (std::size_t k = 0; k < x.size(); ++k) z += (out[k] = std::exp(x[k] - mx));
    for (double& v : out) v /= z;
    return out;
}

inline double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

// Subgradient of min(v, 1 - v).
inline double penalty_slope(double v) { return v < 0.5 ? 1.0 : (v > 0.5 ? -1.0 : 0.0); }

RelaxedVars zeros_like(const RelaxedVars& v) {
    RelaxedVars out;
    out.m.assign(v.m.size(), 0.0);
    for (const auto& row : v.z) out.z.emplace_back(row.size(), 0.0);
    for (const auto& row : v.u_raw) {
        out.u_raw.emplace_back();
        for (const auto& cell : row) out.u_raw.back().emplace_back(cell.size(), 0.0);
    }
    return out;
}

void check_shape(const TweetCollection& day, const RelaxedVars& vars, const AttackSynonyms& syn) {
    const std::size_t n = day.tweets.size();
    if (vars.m.size() != n || vars.z.size() != n || vars.u_raw.size() != n || syn.size() != n)
        throw ShapeError("relaxed variables do not match the day's tweet count");
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t L = day.tweets[i].tokens.size();
        if (vars.z[i].size() != L || vars.u_raw[i].size() != L || syn[i].size() != L)
            throw ShapeError("relaxed variables do not match tweet " + std::to_string(i) + "'s length");
    }
}

}  // namespace

std::size_t AttackProblem::n_valid(std::size_t tweet) const {
    std::size_t c = 0;
    for (const auto& s : synonyms[tweet]) c += s.empty() ? 0 : 1;
    return c;
}

std::vector<std::vector<Vec>> mix_weights(const RelaxedVars& vars) {
    std::vector<std::vector<Vec>> out(vars.u_raw.size());
    for (std::size_t i = 0; i < vars.u_raw.size(); ++i)
        for (const auto& cell : vars.u_raw[i]) out[i].push_back(softmax(cell));
    return out;
}

Vec project_capped_box_simplex(std::span<const double> v, double budget) {
    Vec x(v.size());
    double sum = 0;
    for (std::size_t i = 0; i < v.size(); ++i) sum += (x[i] = clamp01(v[i]));
    if (sum <= budget) return x;
    auto shifted_sum = [&](double theta) {
        double s = 0;
        for (double vi : v) s += clamp01(vi - theta);
        return s;
    };
    double lo = 0.0, hi = *std::max_element(v.begin(), v.end());
    for (int it = 0; it < 200 && hi - lo > 1e-12; ++it) {
        double mid = 0.5 * (lo + hi);
        if (shifted_sum(mid) > budget)
            lo = mid;
        else
            hi = mid;
    }
    for (std::size_t i = 0; i < v.size(); ++i) x[i] = clamp01(v[i] - hi);
    return x;
}

AttackProblem make_problem(const VictimModel& model, const Instance& instance, const EmbeddingTable& table,
                           const SynonymTable& synonyms, const Budgets& budgets, AttackMode mode, PerturbKind kind,
                           const Vocab* vocab) {
    budgets.validate();
    if (instance.tweet_window.empty()) throw ShapeError("instance has no tweet window");
    AttackProblem p;
    p.model = &model;
    p.instance = &instance;
    p.table = &table;
    p.vocab = vocab;
    p.mode = mode;
    p.kind = kind;
    for (const auto& tweet : instance.anchor_tweets().tweets) {
        std::vector<std::vector<TokenId>> row;
        for (TokenId t : tweet.tokens) {
            std::vector<TokenId> cands;
            if (t != Vocab::pad_id) {
                if (kind == PerturbKind::Delete) {
                    cands.push_back(Vocab::pad_id);
                } else if (const SynonymSet* set = synonyms.find(t)) {
                    std::size_t n = std::min(budgets.candidates, set->candidates.size());
                    cands.assign(set->candidates.begin(), set->candidates.begin() + static_cast<std::ptrdiff_t>(n));
                }
            }
            row.push_back(std::move(cands));
        }
        p.synonyms.push_back(std::move(row));
    }
    return p;
}

RelaxedVars zero_vars(const AttackProblem& problem) {
    RelaxedVars v;
    v.m.assign(problem.n_tweets(), 0.0);
    for (const auto& row : problem.synonyms) {
        v.z.emplace_back(row.size(), 0.0);
        v.u_raw.emplace_back();
        for (const auto& cands : row) v.u_raw.back().emplace_back(cands.size(), 0.0);
    }
    return v;
}

SoftCollection apply_perturbation(const TweetCollection& day, const RelaxedVars& vars,
                                  const std::vector<std::vector<Vec>>& mix, const AttackSynonyms& synonyms,
                                  AttackMode mode, PerturbKind kind) {
    check_shape(day, vars, synonyms);
    SoftCollection soft;
    soft.mode = mode;
    soft.benign = day.tweets;
    for (std::size_t i = 0; i < day.tweets.size(); ++i) {
        SoftCandidate c;
        c.source = i;
        c.inclusion = vars.m[i];
        c.word_select = vars.z[i];
        const std::size_t L = day.tweets[i].tokens.size();
        c.synonyms.resize(L);
        c.mix.resize(L);
        for (std::size_t j = 0; j < L; ++j) {
            if (synonyms[i][j].empty()) {
                if (vars.z[i][j] != 0.0) throw SynonymGapError(i, j);
                continue;
            }
            if (kind == PerturbKind::Delete) {
                c.synonyms[j] = {Vocab::pad_id};
                c.mix[j] = {1.0};
            } else {
                if (mix.at(i).at(j).size() != synonyms[i][j].size()) throw ShapeError("mix weights do not match candidates");
                c.synonyms[j] = synonyms[i][j];
                c.mix[j] = mix[i][j];
            }
        }
        soft.candidates.push_back(std::move(c));
    }
    return soft;
}

SoftCollection apply_perturbation(const TweetCollection& day, const RelaxedVars& vars, const AttackSynonyms& synonyms,
                                  AttackMode mode, PerturbKind kind) {
    check_shape(day, vars, synonyms);
    return apply_perturbation(day, vars, mix_weights(vars), synonyms, mode, kind);
}

double label_loss(double logit, int label) { return label == 1 ? softplus(-logit) : softplus(logit); }

double sparsity_penalty(const AttackProblem& problem, const RelaxedVars& vars) {
    double r = 0;
    for (double v : vars.m) r += std::min(v, 1.0 - v);
    for (std::size_t i = 0; i < vars.z.size(); ++i)
        for (std::size_t j = 0; j < vars.z[i].size(); ++j)
            if (problem.valid(i, j)) r += std::min(vars.z[i][j], 1.0 - vars.z[i][j]);
    return r;
}

namespace {

struct SingleEval {
    double loss = 0;
    RelaxedVars grad;  // d loss / d vars (u_raw through the softmax)
    std::vector<std::vector<Vec>> grad_mix;
};

SingleEval eval_once(const AttackProblem& problem, const RelaxedVars& vars, bool with_grad) {
    SoftCollection soft = apply_perturbation(problem.day(), vars, problem.synonyms, problem.mode, problem.kind);
    const int y = problem.instance->label;
    SingleEval out;
    if (!with_grad) {
        out.loss = label_loss(forward(*problem.model, *problem.instance, *problem.table, &soft).logit, y);
        return out;
    }
    SoftGradients g = grad_attack_vars(*problem.model, *problem.instance, *problem.table, soft);
    out.loss = label_loss(g.logit, y);
    const double dl = sigmoid(g.logit) - (y == 1 ? 1.0 : 0.0);
    out.grad = zeros_like(vars);
    out.grad_mix.resize(vars.u_raw.size());
    for (std::size_t i = 0; i < vars.m.size(); ++i) {
        out.grad.m[i] = dl * g.inclusion[i];
        out.grad_mix[i].resize(vars.u_raw[i].size());
        for (std::size_t j = 0; j < vars.z[i].size(); ++j) {
            if (!problem.valid(i, j)) continue;
            out.grad.z[i][j] = dl * g.word_select[i][j];
            const std::size_t K = vars.u_raw[i][j].size();
            out.grad_mix[i][j].assign(K, 0.0);
            if (problem.kind == PerturbKind::Delete) continue;
            Vec u = softmax(vars.u_raw[i][j]);
            double mean = 0;
            for (std::size_t k = 0; k < K; ++k) {
                out.grad_mix[i][j][k] = dl * g.mix[i][j][k];
                mean += u[k] * out.grad_mix[i][j][k];
            }
            for (std::size_t k = 0; k < K; ++k) out.grad.u_raw[i][j][k] = u[k] * (out.grad_mix[i][j][k] - mean);
        }
    }
    return out;
}

template <class F>
void for_each_entry(RelaxedVars& a, const RelaxedVars& b, F f) {
    for (std::size_t i = 0; i < a.m.size(); ++i) f(a.m[i], b.m[i]);
    for (std::size_t i = 0; i < a.z.size(); ++i)
        for (std::size_t j = 0; j < a.z[i].size(); ++j) f(a.z[i][j], b.z[i][j]);
    for (std::size_t i = 0; i < a.u_raw.size(); ++i)
        for (std::size_t j = 0; j < a.u_raw[i].size(); ++j)
            for (std::size_t k = 0; k < a.u_raw[i][j].size(); ++k) f(a.u_raw[i][j][k], b.u_raw[i][j][k]);
}

}  // namespace

ObjectiveValue attack_objective(const AttackProblem& problem, const RelaxedVars& vars, const SolverConfig& cfg,
                                Rng* rng, bool with_grad) {
    ObjectiveValue out;
    out.penalty = sparsity_penalty(problem, vars);
    const bool smooth = cfg.smoothing && cfg.sigma > 0;
    if (!smooth) {
        SingleEval e = eval_once(problem, vars, with_grad);
        out.loss = e.loss;
        out.queries = 1;
        if (with_grad) {
            out.loss_grad = std::move(e.grad);
            out.grad_mix = std::move(e.grad_mix);
        }
    } else {
        Rng local(cfg.seed);
        Rng& r = rng ? *rng : local;
        if (with_grad) {
            out.loss_grad = zeros_like(vars);
            out.grad_mix.resize(vars.u_raw.size());
            for (std::size_t i = 0; i < vars.u_raw.size(); ++i)
                for (const auto& cell : vars.u_raw[i]) out.grad_mix[i].emplace_back(cell.size(), 0.0);
        }
        const double inv = 1.0 / static_cast<double>(cfg.n_samples);
        for (std::size_t s = 0; s < cfg.n_samples; ++s) {
            RelaxedVars noisy = vars;
            RelaxedVars pass = zeros_like(vars);  // 1 where the clamp leaves the entry differentiable
            for (std::size_t i = 0; i < noisy.m.size(); ++i) {
                double v = vars.m[i] + cfg.sigma * normal01(r);
                noisy.m[i] = clamp01(v);
                pass.m[i] = (v > 0 && v < 1) ? 1.0 : 0.0;
            }
            for (std::size_t i = 0; i < noisy.z.size(); ++i)
                for (std::size_t j = 0; j < noisy.z[i].size(); ++j) {
                    if (!problem.valid(i, j)) continue;
                    double v = vars.z[i][j] + cfg.sigma * normal01(r);
                    noisy.z[i][j] = clamp01(v);
                    pass.z[i][j] = (v > 0 && v < 1) ? 1.0 : 0.0;
                }
            for (std::size_t i = 0; i < noisy.u_raw.size(); ++i)
                for (std::size_t j = 0; j < noisy.u_raw[i].size(); ++j)
                    for (std::size_t k = 0; k < noisy.u_raw[i][j].size(); ++k) {
                        noisy.u_raw[i][j][k] += cfg.sigma * normal01(r);
                        pass.u_raw[i][j][k] = 1.0;
                    }
            SingleEval e = eval_once(problem, noisy, with_grad);
            out.loss += e.loss * inv;
            ++out.queries;
            if (!with_grad) continue;
            for_each_entry(e.grad, pass, [](double& g, double p) { g *= p; });
            for_each_entry(out.loss_grad, e.grad, [inv](double& acc, double g) { acc += g * inv; });
            for (std::size_t i = 0; i < e.grad_mix.size(); ++i)
                for (std::size_t j = 0; j < e.grad_mix[i].size(); ++j)
                    for (std::size_t k = 0; k < e.grad_mix[i][j].size(); ++k)
                        out.grad_mix[i][j][k] += e.grad_mix[i][j][k] * inv;
        }
    }
    out.value = out.loss - cfg.lambda * out.penalty;
    if (with_grad) {
        out.grad = out.loss_grad;
        for (std::size_t i = 0; i < vars.m.size(); ++i) out.grad.m[i] -= cfg.lambda * penalty_slope(vars.m[i]);
        for (std::size_t i = 0; i < vars.z.size(); ++i)
            for (std::size_t j = 0; j < vars.z[i].size(); ++j)
                if (problem.valid(i, j)) out.grad.z[i][j] -= cfg.lambda * penalty_slope(vars.z[i][j]);
    }
    return out;
}

// ------------------------------------------------------ hard perturbations

namespace {

void render(Tweet& t) {
    std::string raw;
    for (const auto& w : t.words) {
        if (w.empty()) continue;
        if (!raw.empty()) raw += ' ';
        raw += w;
    }
    t.raw = raw;
}

Tweet edited_tweet(const AttackProblem& problem, std::size_t tweet,
                   const std::vector<std::pair<std::size_t, TokenId>>& edits) {
    Tweet t = problem.day().tweets[tweet];
    if (t.words.size() != t.tokens.size()) t.words.resize(t.tokens.size());
    for (auto [pos, tok] : edits) {
        if (!problem.valid(tweet, pos)) throw SynonymGapError(tweet, pos);
        t.tokens[pos] = tok;
        if (tok == Vocab::pad_id)
            t.words[pos].clear();
        else
            t.words[pos] = problem.vocab ? problem.vocab->word(tok) : "<" + std::to_string(tok) + ">";
    }
    render(t);
    return t;
}

}  // namespace

TweetCollection perturbed_day(const AttackProblem& problem, const HardPerturbation& p) {
    TweetCollection day = problem.day();
    for (std::size_t s = 0; s < p.tweets.size(); ++s) {
        Tweet t = edited_tweet(problem, p.tweets[s], p.edits.at(s));
        if (problem.mode == AttackMode::Concatenate)
            day.tweets.push_back(std::move(t));
        else
            day.tweets.at(p.tweets[s]) = std::move(t);
    }
    return day;
}

RelaxedVars one_hot_vars(const AttackProblem& problem, const HardPerturbation& p) {
    RelaxedVars v = zero_vars(problem);
    for (std::size_t s = 0; s < p.tweets.size(); ++s) {
        const std::size_t i = p.tweets[s];
        v.m.at(i) = 1.0;
        for (auto [pos, tok] : p.edits.at(s)) {
            v.z[i].at(pos) = 1.0;
            const auto& cands = problem.synonyms[i][pos];
            auto it = std::find(cands.begin(), cands.end(), tok);
            if (it == cands.end()) throw SynonymGapError(i, pos);
            for (std::size_t k = 0; k < cands.size(); ++k) v.u_raw[i][pos][k] = -1000.0;
            v.u_raw[i][pos][static_cast<std::size_t>(it - cands.begin())] = 0.0;
        }
    }
    return v;
}

HardEval evaluate_hard(const AttackProblem& problem, const HardPerturbation& p) {
    TweetCollection day = perturbed_day(problem, p);
    SequenceInput x = build_input(*problem.instance, *problem.table, day);
    HardEval e;
    e.logit = problem.model->logit(x);
    e.label = predict_label(e.logit);
    e.loss = label_loss(e.logit, problem.instance->label);
    return e;
}

HardEval check_applicable(const AttackProblem& problem) {
    HardEval e;
    e.logit = forward(*problem.model, *problem.instance, *problem.table).logit;
    e.label = predict_label(e.logit);
    e.loss = label_loss(e.logit, problem.instance->label);
    if (e.label != problem.instance->label) throw NotApplicable();
    return e;
}

std::vector<std::size_t> top_k(std::span<const double> values, std::size_t k, const std::vector<bool>& allowed) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (allowed.empty() || allowed[i]) idx.push_back(i);
    k = std::min(k, idx.size());
    std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                      [&](std::size_t a, std::size_t b) { return values[a] > values[b] || (values[a] == values[b] && a < b); });
    idx.resize(k);
    std::sort(idx.begin(), idx.end());
    return idx;
}

namespace {

std::size_t argmax_lowest(const Vec& v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k)
        if (v[k] > v[best]) best = k;
    return best;
}

std::vector<bool> valid_mask(const AttackProblem& problem, std::size_t tweet) {
    std::vector<bool> mask(problem.synonyms[tweet].size());
    for (std::size_t j = 0; j < mask.size(); ++j) mask[j] = problem.valid(tweet, j);
    return mask;
}

AttackResult base_result(const AttackProblem& problem, const std::string& solver, const HardEval& pre) {
    AttackResult r;
    r.instance_id = problem.instance->id;
    r.stock = problem.instance->stock;
    r.date = format_date(problem.instance->date);
    r.solver = solver;
    r.mode = mode_name(problem.mode);
    r.kind = kind_name(problem.kind);
    r.true_label = problem.instance->label;
    r.pre_label = pre.label;
    r.pre_logit = pre.logit;
    r.post_label = pre.label;
    r.post_logit = pre.logit;
    r.objective = pre.loss;
    return r;
}

void finish(AttackResult& r, const AttackProblem& problem, const HardPerturbation& p) {
    HardEval post = evaluate_hard(problem, p);
    r.perturbation = p;
    r.post_label = post.label;
    r.post_logit = post.logit;
    r.objective = post.loss;
    r.success = post.label != problem.instance->label;
    for (std::size_t s = 0; s < p.tweets.size(); ++s) {
        r.original_texts.push_back(problem.day().tweets[p.tweets[s]].raw);
        r.adversarial_texts.push_back(edited_tweet(problem, p.tweets[s], p.edits[s]).raw);
    }
}

double max_abs(const RelaxedVars& g, int block) {
    double mx = 0;
    if (block == 0)
        for (double v : g.m) mx = std::max(mx, std::abs(v));
    if (block == 1)
        for (const auto& row : g.z)
            for (double v : row) mx = std::max(mx, std::abs(v));
    if (block == 2)
        for (const auto& row : g.u_raw)
            for (const auto& cell : row)
                for (double v : cell) mx = std::max(mx, std::abs(v));
    return mx;
}

double relaxed_loss(const AttackProblem& problem, const RelaxedVars& vars) {
    return eval_once(problem, vars, false).loss;
}

void record_iterate(AttackResult& r, const AttackProblem& problem, const RelaxedVars& vars, const Budgets& budgets,
                    double loss0) {
    double loss = relaxed_loss(problem, vars);
    r.trajectory.push_back(loss0 > 0 ? loss / loss0 : 1.0);
    bool ok = evaluate_hard(problem, discretize(problem, vars, budgets)).label != problem.instance->label;
    r.success_at_iter.push_back(ok);
    if (ok && !r.iterations_to_success) r.iterations_to_success = r.success_at_iter.size();
}

}  // namespace

HardPerturbation discretize(const AttackProblem& problem, const RelaxedVars& vars, const Budgets& budgets) {
    HardPerturbation p;
    auto mix = mix_weights(vars);
    p.tweets = top_k(vars.m, budgets.tweets);
    for (std::size_t i : p.tweets) {
        std::vector<std::pair<std::size_t, TokenId>> edits;
        for (std::size_t j : top_k(vars.z[i], budgets.words, valid_mask(problem, i))) {
            const auto& cands = problem.synonyms[i][j];
            std::size_t k = problem.kind == PerturbKind::Delete ? 0 : argmax_lowest(mix[i][j]);
            edits.emplace_back(j, cands[k]);
        }
        p.edits.push_back(std::move(edits));
    }
    return p;
}

AttackResult solve_jo(const AttackProblem& problem, const Budgets& budgets, const SolverConfig& cfg) {
    budgets.validate();
    cfg.validate();
    HardEval pre = check_applicable(problem);
    AttackResult r = base_result(problem, "jo", pre);
    const std::size_t n = problem.n_tweets();

    RelaxedVars vars = zero_vars(problem);
    for (std::size_t i = 0; i < n; ++i) {
        vars.m[i] = std::min(1.0, static_cast<double>(budgets.tweets) / static_cast<double>(n));
        std::size_t nv = problem.n_valid(i);
        for (std::size_t j = 0; j < vars.z[i].size(); ++j)
            if (problem.valid(i, j)) vars.z[i][j] = std::min(1.0, static_cast<double>(budgets.words) / static_cast<double>(nv));
    }
    Rng rng(mix_seed(cfg.seed, problem.instance->id));
    const double loss0 = relaxed_loss(problem, vars);

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        ObjectiveValue o = attack_objective(problem, vars, cfg, &rng, true);
        r.queries += o.queries;
        // The loss gradient is rescaled to unit max-norm per block so the
        // step sizes are in units of the variables themselves.
        const double sm = max_abs(o.loss_grad, 0), sz = max_abs(o.loss_grad, 1), su = max_abs(o.loss_grad, 2);
        for (std::size_t i = 0; i < n; ++i) {
            double g = sm > 0 ? o.loss_grad.m[i] / sm : 0.0;
            vars.m[i] += cfg.eta_m * (g - cfg.lambda * penalty_slope(vars.m[i]));
        }
        vars.m = project_capped_box_simplex(vars.m, static_cast<double>(budgets.tweets));
        for (std::size_t i = 0; i < n; ++i) {
            Vec sub;
            std::vector<std::size_t> where;
            for (std::size_t j = 0; j < vars.z[i].size(); ++j) {
                if (!problem.valid(i, j)) continue;
                double g = sz > 0 ? o.loss_grad.z[i][j] / sz : 0.0;
                sub.push_back(vars.z[i][j] + cfg.eta_z * (g - cfg.lambda * penalty_slope(vars.z[i][j])));
                where.push_back(j);
            }
            sub = project_capped_box_simplex(sub, static_cast<double>(budgets.words));
            for (std::size_t q = 0; q < where.size(); ++q) vars.z[i][where[q]] = sub[q];
        }
        if (su > 0)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < vars.u_raw[i].size(); ++j)
                    for (std::size_t k = 0; k < vars.u_raw[i][j].size(); ++k)
                        vars.u_raw[i][j][k] += cfg.eta_u * o.loss_grad.u_raw[i][j][k] / su;
        record_iterate(r, problem, vars, budgets, loss0);
    }
    finish(r, problem, discretize(problem, vars, budgets));
    return r;
}

AttackResult solve_ago(const AttackProblem& problem, const Budgets& budgets, const SolverConfig& cfg) {
    budgets.validate();
    cfg.validate();
    HardEval pre = check_applicable(problem);
    AttackResult r = base_result(problem, "ago", pre);
    const std::size_t n = problem.n_tweets();

    RelaxedVars vars = zero_vars(problem);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t nv = problem.n_valid(i);
        for (std::size_t j = 0; j < vars.z[i].size(); ++j)
            if (problem.valid(i, j)) vars.z[i][j] = std::min(1.0, static_cast<double>(budgets.words) / static_cast<double>(nv));
    }
    Rng rng(mix_seed(cfg.seed, problem.instance->id));
    const double loss0 = pre.loss;

    auto u_steps = [&](RelaxedVars& v, const std::vector<std::size_t>& rows) {
        if (problem.kind != PerturbKind::Replace) return;
        for (std::size_t s = 0; s < cfg.ago_u_steps; ++s) {
            ObjectiveValue o = attack_objective(problem, v, cfg, &rng, true);
            r.queries += o.queries;
            const double su = max_abs(o.loss_grad, 2);
            if (su == 0) break;
            for (std::size_t i : rows)
                for (std::size_t j = 0; j < v.u_raw[i].size(); ++j)
                    for (std::size_t k = 0; k < v.u_raw[i][j].size(); ++k)
                        v.u_raw[i][j][k] += cfg.eta_u * o.loss_grad.u_raw[i][j][k] / su;
        }
    };
    auto pick_words = [&](RelaxedVars& v, std::size_t i) {
        Vec wscore(v.z[i].size(), -std::numeric_limits<double>::infinity());
        auto mask = valid_mask(problem, i);
        for (std::size_t j = 0; j < wscore.size(); ++j) {
            if (!mask[j]) continue;
            RelaxedVars trial = v;
            std::fill(trial.z[i].begin(), trial.z[i].end(), 0.0);
            trial.z[i][j] = 1.0;
            wscore[j] = relaxed_loss(problem, trial);
            ++r.queries;
        }
        auto words = top_k(wscore, budgets.words, mask);
        std::fill(v.z[i].begin(), v.z[i].end(), 0.0);
        for (std::size_t j : words) v.z[i][j] = 1.0;
    };

    // warm start: every tweet gets its own û and words, scored in isolation
    for (std::size_t i = 0; i < n; ++i) {
        if (problem.n_valid(i) == 0) continue;
        RelaxedVars trial = vars;
        std::fill(trial.m.begin(), trial.m.end(), 0.0);
        trial.m[i] = 1.0;
        u_steps(trial, {i});
        pick_words(trial, i);
        vars.u_raw[i] = trial.u_raw[i];
        vars.z[i] = trial.z[i];
    }

    HardPerturbation best;
    double best_loss = -std::numeric_limits<double>::infinity();
    double prev = loss0;
    bool have_best = false;
    for (std::size_t round = 0; round < cfg.iterations; ++round) {
        // (1) tweets: each quote tweet scored alone with its current words and û
        Vec scores(n);
        for (std::size_t i = 0; i < n; ++i) {
            RelaxedVars trial = vars;
            std::fill(trial.m.begin(), trial.m.end(), 0.0);
            trial.m[i] = 1.0;
            scores[i] = relaxed_loss(problem, trial);
            ++r.queries;
        }
        auto chosen = top_k(scores, budgets.tweets);
        std::fill(vars.m.begin(), vars.m.end(), 0.0);
        for (std::size_t i : chosen) vars.m[i] = 1.0;

        // (2) words within the selected tweets
        for (std::size_t i : chosen) pick_words(vars, i);

        // (3) replacements, selections fixed
        u_steps(vars, chosen);

        record_iterate(r, problem, vars, budgets, loss0);
        HardPerturbation hard = discretize(problem, vars, budgets);
        double hard_loss = evaluate_hard(problem, hard).loss;
        if (!have_best || hard_loss > best_loss) {
            best = hard;
            best_loss = hard_loss;
            have_best = true;
        }
        double cur = relaxed_loss(problem, vars);
        if (cur <= prev + 1e-12) break;
        prev = cur;
    }
    while (r.trajectory.size() < cfg.iterations) {
        r.trajectory.push_back(r.trajectory.back());
        r.success_at_iter.push_back(r.success_at_iter.back());
    }
    finish(r, problem, best);
    return r;
}

AttackResult random_attack(const AttackProblem& problem, const Budgets& budgets, std::uint64_t seed) {
    budgets.validate();
    HardEval pre = check_applicable(problem);
    AttackResult r = base_result(problem, "ra", pre);
    Rng rng(mix_seed(seed, problem.instance->id));
    auto sample = [&](std::vector<std::size_t> pool, std::size_t k) {
        k = std::min(k, pool.size());
        for (std::size_t q = 0; q < k; ++q) std::swap(pool[q], pool[q + uniform_index(rng, pool.size() - q)]);
        pool.resize(k);
        std::sort(pool.begin(), pool.end());
        return pool;
    };
    std::vector<std::size_t> all(problem.n_tweets());
    std::iota(all.begin(), all.end(), std::size_t{0});
    HardPerturbation p;
    p.tweets = sample(all, budgets.tweets);
    for (std::size_t i : p.tweets) {
        std::vector<std::size_t> valid;
        for (std::size_t j = 0; j < problem.synonyms[i].size(); ++j)
            if (problem.valid(i, j)) valid.push_back(j);
        std::vector<std::pair<std::size_t, TokenId>> edits;
        for (std::size_t j : sample(valid, budgets.words)) {
            const auto& cands = problem.synonyms[i][j];
            edits.emplace_back(j, cands[uniform_index(rng, cands.size())]);
        }
        p.edits.push_back(std::move(edits));
    }
    r.queries = 1;
    finish(r, problem, p);
    return r;
}

AttackResult brute_force_attack(const AttackProblem& problem, std::size_t limit) {
    std::size_t max_len = 0, max_u = 0;
    for (const auto& row : problem.synonyms) {
        max_len = std::max(max_len, row.size());
        for (const auto& c : row) max_u = std::max(max_u, c.size());
    }
    const std::size_t size = problem.n_tweets() * std::max<std::size_t>(max_len, 1) * std::max<std::size_t>(max_u, 1);
    if (size > limit)
        throw TooLarge("brute force over " + std::to_string(size) + " combinations exceeds the limit of " +
                       std::to_string(limit));
    HardEval pre = check_applicable(problem);
    AttackResult r = base_result(problem, "brute", pre);
    HardPerturbation best;
    double best_loss = -std::numeric_limits<double>::infinity();
    auto consider = [&](HardPerturbation p) {
        double loss = evaluate_hard(problem, p).loss;
        ++r.queries;
        if (loss > best_loss) {
            best_loss = loss;
            best = std::move(p);
        }
    };
    for (std::size_t i = 0; i < problem.n_tweets(); ++i) {
        if (problem.n_valid(i) == 0) {
            consider(HardPerturbation{{i}, {{}}});
            continue;
        }
        for (std::size_t j = 0; j < problem.synonyms[i].size(); ++j)
            for (TokenId tok : problem.synonyms[i][j]) consider(HardPerturbation{{i}, {{{j, tok}}}});
    }
    finish(r, problem, best);
    return r;
}

AttackResult no_attack(const AttackProblem& problem) {
    HardEval pre = check_applicable(problem);
    AttackResult r = base_result(problem, "na", pre);
    r.queries = 0;
    return r;
}

}  // namespace quotestorm
