#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "attack_fixture.hpp"

using namespace quotestorm;
using qs_test::Fixture;

namespace {

double max_diff(const Vec& a, const Vec& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

double sum(const Vec& v) {
    double s = 0;
    for (double x : v) s += x;
    return s;
}

}  // namespace

TEST_CASE("projection onto the capped box simplex") {
    Vec inside{0.2, 0.3, 0.1};
    CHECK(project_capped_box_simplex(inside, 1.0) == inside);

    Vec p = project_capped_box_simplex(Vec{5, 5}, 1.0);
    CHECK(std::abs(p[0] - 0.5) < 1e-10);
    CHECK(std::abs(p[1] - 0.5) < 1e-10);
    CHECK(max_diff(p, qs_test::grid_project(Vec{5, 5}, 1.0)) < 2e-3);

    Vec v{0.9, 0.8, 0.3};
    Vec q = project_capped_box_simplex(v, 1.0);
    CHECK(max_diff(q, qs_test::grid_project(v, 1.0)) < 2e-3);
    CHECK(sum(q) <= 1.0 + 1e-12);

    Vec clipped = project_capped_box_simplex(Vec{-0.5, 1.7, 0.2}, 3.0);
    CHECK(clipped == Vec{0.0, 1.0, 0.2});
    CHECK(project_capped_box_simplex(Vec{}, 1.0).empty());
}

TEST_CASE("projection matches the grid oracle and is idempotent") {
    Rng rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        std::size_t n = 1 + uniform_index(rng, 4);
        Vec v(n);
        for (double& x : v) x = 3.0 * normal01(rng) * 0.5 + 0.3;
        double b = 1.0 + static_cast<double>(uniform_index(rng, n));
        Vec p = project_capped_box_simplex(v, b);
        CHECK(max_diff(p, qs_test::grid_project(v, b)) < 2e-3);
        CHECK(max_diff(project_capped_box_simplex(p, b), p) <= 1e-10);
        for (double x : p) {
            CHECK(x >= 0.0);
            CHECK(x <= 1.0);
        }
        CHECK(sum(p) <= b + 1e-12);
    }
}

TEST_CASE("m = 0 reproduces the benign logit") {
    for (auto victim : {VictimKind::BagLinear, VictimKind::FinGRU, VictimKind::FinLSTM})
        for (auto mode : {AttackMode::Concatenate, AttackMode::Manipulate}) {
            Fixture f(victim, mode, PerturbKind::Replace, 3);
            Rng rng(1);
            RelaxedVars v = qs_test::random_vars(f.problem, rng);
            std::fill(v.m.begin(), v.m.end(), 0.0);
            SoftCollection soft = apply_perturbation(f.problem.day(), v, f.problem.synonyms, mode, PerturbKind::Replace);
            CHECK(std::abs(forward(*f.model, f.instance, f.table, &soft).logit - forward(*f.model, f.instance, f.table).logit) <=
                  1e-12);
        }
}

TEST_CASE("one-hot variables equal the hard perturbation") {
    Fixture f(VictimKind::FinGRU, AttackMode::Concatenate, PerturbKind::Replace, 5, 3, 4, 3, 0.0);
    REQUIRE(f.problem.synonyms[0].size() >= 1);
    std::size_t pos = f.problem.synonyms[0].size() - 1;
    TokenId repl = f.problem.synonyms[0][pos][1];
    HardPerturbation p{{0}, {{{pos, repl}}}};
    for (auto mode : {AttackMode::Concatenate, AttackMode::Manipulate}) {
        f.problem.mode = mode;
        RelaxedVars v = one_hot_vars(f.problem, p);
        SoftCollection soft = apply_perturbation(f.problem.day(), v, f.problem.synonyms, mode, PerturbKind::Replace);
        TweetCollection day = perturbed_day(f.problem, p);
        if (mode == AttackMode::Concatenate) {
            REQUIRE(day.tweets.size() == f.problem.day().tweets.size() + 1);
            CHECK(day.tweets.back().tokens[pos] == repl);
        } else {
            CHECK(day.tweets[0].tokens[pos] == repl);
        }
        double soft_logit = forward(*f.model, f.instance, f.table, &soft).logit;
        CHECK(std::abs(soft_logit - evaluate_hard(f.problem, p).logit) <= 1e-10);
    }
}

TEST_CASE("fractional variables match a hand-evaluated mixture") {
    Fixture f(VictimKind::BagLinear, AttackMode::Concatenate, PerturbKind::Replace, 8, 3, 4, 2, 0.0);
    const auto& day = f.problem.day();
    const std::size_t D = Fixture::kDim;
    RelaxedVars v = zero_vars(f.problem);
    v.m[0] = 0.5;
    v.z[0][0] = 0.5;
    SoftCollection soft = apply_perturbation(day, v, f.problem.synonyms, AttackMode::Concatenate, PerturbKind::Replace);
    Vec pooled = pool_day(soft, f.table);

    // tweet 0 with its first word half-replaced by the mean of two candidates
    const Tweet& t0 = day.tweets[0];
    Vec q(D, 0.0);
    for (std::size_t j = 0; j < t0.length(); ++j) {
        auto e = f.table.vector(t0.tokens[j]);
        for (std::size_t c = 0; c < D; ++c) {
            if (j == 0) {
                auto s1 = f.table.vector(f.problem.synonyms[0][0][0]);
                auto s2 = f.table.vector(f.problem.synonyms[0][0][1]);
                q[c] += 0.5 * e[c] + 0.5 * (0.5 * s1[c] + 0.5 * s2[c]);
            } else {
                q[c] += e[c];
            }
        }
    }
    for (double& x : q) x /= static_cast<double>(t0.length());
    Vec expect(D, 0.0);
    for (const auto& t : day.tweets) {
        Vec e = pool_tweet(t, f.table);
        for (std::size_t c = 0; c < D; ++c) expect[c] += e[c];
    }
    for (std::size_t c = 0; c < D; ++c) expect[c] = (expect[c] + 0.5 * q[c]) / (static_cast<double>(day.tweets.size()) + 0.5);
    CHECK(max_diff(pooled, expect) <= 1e-12);
}

TEST_CASE("deletion equals replacement with a pad-only candidate") {
    for (auto victim : {VictimKind::BagLinear, VictimKind::FinGRU, VictimKind::FinLSTM})
        for (auto mode : {AttackMode::Concatenate, AttackMode::Manipulate}) {
            Fixture del(victim, mode, PerturbKind::Delete, 12);
            Fixture rep(victim, mode, PerturbKind::Replace, 12);
            for (auto& row : rep.problem.synonyms)
                for (auto& c : row)
                    if (!c.empty()) c = {Vocab::pad_id};
            Rng rng(2);
            RelaxedVars v = qs_test::random_vars(del.problem, rng);
            SoftCollection a = apply_perturbation(del.problem.day(), v, del.problem.synonyms, mode, PerturbKind::Delete);
            SoftCollection b = apply_perturbation(rep.problem.day(), v, rep.problem.synonyms, mode, PerturbKind::Replace);
            double la = forward(*del.model, del.instance, del.table, &a).logit;
            double lb = forward(*rep.model, rep.instance, rep.table, &b).logit;
            CHECK(std::abs(la - lb) <= 1e-10);
        }
}

TEST_CASE("apply_perturbation rejects weight on a position without candidates") {
    Fixture f(VictimKind::BagLinear, AttackMode::Concatenate, PerturbKind::Replace, 4);
    f.problem.synonyms[0][0].clear();
    RelaxedVars v = zero_vars(f.problem);
    v.z[0][0] = 0.3;
    CHECK_THROWS_AS(apply_perturbation(f.problem.day(), v, f.problem.synonyms, AttackMode::Concatenate, PerturbKind::Replace),
                    SynonymGapError);
}

TEST_CASE("objective special cases") {
    Fixture f(VictimKind::FinLSTM, AttackMode::Concatenate, PerturbKind::Replace, 6);
    SolverConfig cfg;
    cfg.lambda = 0.0;
    RelaxedVars zero = zero_vars(f.problem);
    ObjectiveValue o = attack_objective(f.problem, zero, cfg);
    CHECK(o.value == label_loss(forward(*f.model, f.instance, f.table).logit, f.instance.label));

    RelaxedVars bin = zero;
    bin.m[0] = 1.0;
    for (std::size_t j = 0; j < bin.z[0].size(); ++j)
        if (f.problem.valid(0, j)) bin.z[0][j] = 1.0;
    CHECK(sparsity_penalty(f.problem, bin) == 0.0);

    Rng rng(3);
    RelaxedVars v = qs_test::random_vars(f.problem, rng);
    cfg.lambda = 0.1;
    double plain = attack_objective(f.problem, v, cfg).value;
    cfg.smoothing = true;
    cfg.sigma = 0.0;
    cfg.n_samples = 10;
    Rng noise(4);
    CHECK(std::abs(attack_objective(f.problem, v, cfg, &noise).value - plain) <= 1e-12);
    cfg.sigma = 0.1;
    ObjectiveValue smooth = attack_objective(f.problem, v, cfg, &noise);
    CHECK(smooth.queries == 10);
    CHECK(std::isfinite(smooth.value));
}

TEST_CASE("objective gradient matches finite differences") {
    SolverConfig cfg;
    cfg.lambda = 0.1;
    for (auto victim : {VictimKind::BagLinear, VictimKind::FinGRU, VictimKind::FinLSTM})
        for (auto mode : {AttackMode::Concatenate, AttackMode::Manipulate})
            for (auto kind : {PerturbKind::Replace, PerturbKind::Delete}) {
                CAPTURE(victim_name(victim));
                CAPTURE(mode_name(mode));
                CAPTURE(kind_name(kind));
                for (std::uint64_t s = 0; s < 3; ++s) {
                    Fixture f(victim, mode, kind, 40 + s);
                    Rng rng(s);
                    RelaxedVars v = qs_test::random_vars(f.problem, rng);
                    CHECK(qs_test::objective_gradient_error(f.problem, v, cfg) < 1e-4);
                }
            }
}

TEST_CASE("mode separation of the hard perturbation") {
    Fixture f(VictimKind::BagLinear, AttackMode::Concatenate, PerturbKind::Replace, 9, 4, 4, 3, 0.0);
    const auto& day = f.problem.day();
    REQUIRE(day.tweets.size() >= 2);
    HardPerturbation p{{1}, {{{0, f.problem.synonyms[1][0][0]}}}};
    TweetCollection cat = perturbed_day(f.problem, p);
    REQUIRE(cat.tweets.size() == day.tweets.size() + 1);
    for (std::size_t i = 0; i < day.tweets.size(); ++i) CHECK(cat.tweets[i].tokens == day.tweets[i].tokens);
    f.problem.mode = AttackMode::Manipulate;
    TweetCollection man = perturbed_day(f.problem, p);
    REQUIRE(man.tweets.size() == day.tweets.size());
    for (std::size_t i = 0; i < day.tweets.size(); ++i) CHECK((man.tweets[i].tokens == day.tweets[i].tokens) == (i != 1));
}

TEST_CASE("top_k and discretization respect budgets") {
    Vec v{0.3, 0.9, 0.3, 0.9};
    CHECK(top_k(v, 1) == std::vector<std::size_t>{1});
    CHECK(top_k(v, 3) == std::vector<std::size_t>{0, 1, 3});
    CHECK(top_k(v, 2, {true, false, true, true}) == std::vector<std::size_t>{0, 3});
    CHECK(top_k(v, 9).size() == 4);

    Rng rng(5);
    for (std::uint64_t s = 0; s < 20; ++s) {
        Fixture f(VictimKind::BagLinear, AttackMode::Manipulate, PerturbKind::Replace, 60 + s, 5, 6);
        RelaxedVars vars = qs_test::random_vars(f.problem, rng);
        Budgets b{1 + s % 3, 1 + s % 2, 3};
        HardPerturbation p = discretize(f.problem, vars, b);
        CHECK(p.tweets.size() <= b.tweets);
        for (std::size_t t = 0; t < p.tweets.size(); ++t) {
            CHECK(p.edits[t].size() <= b.words);
            for (auto [pos, tok] : p.edits[t]) CHECK(f.problem.valid(p.tweets[t], pos));
        }
    }
}

TEST_CASE("brute force equals an independent double loop on a 3x4x5 instance") {
    for (std::uint64_t s = 0; s < 5; ++s) {
        Fixture f(VictimKind::FinGRU, AttackMode::Concatenate, PerturbKind::Replace, 80 + s, 1, 4, 5, 0.0);
        // force exactly 3 tweets of 4 words
        auto& day = f.instance.tweet_window.back();
        day.tweets.clear();
        Rng rng(s);
        for (int i = 0; i < 3; ++i) {
            std::vector<TokenId> toks;
            for (int j = 0; j < 4; ++j) toks.push_back(static_cast<TokenId>(1 + uniform_index(rng, Fixture::kWords)));
            day.tweets.push_back(qs_test::make_tweet(toks));
        }
        f.instance.label = forward(*f.model, f.instance, f.table).label;
        f.problem.synonyms.clear();
        for (const auto& t : day.tweets) {
            std::vector<std::vector<TokenId>> row;
            for (TokenId tok : t.tokens) {
                std::vector<TokenId> c;
                for (int k = 1; k <= 5; ++k) c.push_back(static_cast<TokenId>(1 + (tok + k) % Fixture::kWords));
                row.push_back(c);
            }
            f.problem.synonyms.push_back(row);
        }
        AttackResult r = brute_force_attack(f.problem);
        CHECK(r.queries == 60);

        double best = -1;
        std::size_t bi = 0, bj = 0;
        TokenId bt = 0;
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 4; ++j)
                for (int k = 0; k < 5; ++k) {
                    TweetCollection d = day;
                    Tweet quote = day.tweets[i];
                    quote.tokens[j] = f.problem.synonyms[i][j][static_cast<std::size_t>(k)];
                    d.tweets.push_back(quote);
                    double logit = f.model->logit(build_input(f.instance, f.table, d));
                    double loss = f.instance.label == 1 ? std::log1p(std::exp(-logit)) : std::log1p(std::exp(logit));
                    if (loss > best) {
                        best = loss;
                        bi = i;
                        bj = j;
                        bt = quote.tokens[j];
                    }
                }
        CHECK(std::abs(r.objective - best) <= 1e-12);
        HardPerturbation expect{{bi}, {{{bj, bt}}}};
        CHECK(r.perturbation == expect);
        CHECK_THROWS_AS(brute_force_attack(f.problem, 59), TooLarge);
    }
}

TEST_CASE("single possible perturbation") {
    Fixture f(VictimKind::BagLinear, AttackMode::Concatenate, PerturbKind::Replace, 7, 1, 1, 1, 0.0);
    auto& day = f.instance.tweet_window.back();
    day.tweets = {day.tweets[0]};
    f.problem.synonyms = {{{static_cast<TokenId>(1 + (day.tweets[0].tokens[0] + 1) % Fixture::kWords)}}};
    f.instance.label = forward(*f.model, f.instance, f.table).label;
    HardPerturbation only{{0}, {{{0, f.problem.synonyms[0][0][0]}}}};
    Budgets b{1, 1, 1};
    SolverConfig cfg;
    CHECK(solve_jo(f.problem, b, cfg).perturbation == only);
    CHECK(solve_ago(f.problem, b, cfg).perturbation == only);
    CHECK(random_attack(f.problem, b, 1).perturbation == only);
    CHECK(brute_force_attack(f.problem).perturbation == only);
}

TEST_CASE("AGO reaches the exhaustive maximum on 2x2x2 problems") {
    std::size_t checked = 0;
    for (std::uint64_t s = 0; s < 40; ++s) {
        Fixture f(VictimKind::FinGRU, AttackMode::Concatenate, PerturbKind::Replace, 200 + s, 1, 2, 2, 0.0);
        auto& day = f.instance.tweet_window.back();
        Rng rng(s);
        day.tweets.clear();
        for (int i = 0; i < 2; ++i)
            day.tweets.push_back(qs_test::make_tweet({static_cast<TokenId>(1 + uniform_index(rng, Fixture::kWords)),
                                                      static_cast<TokenId>(1 + uniform_index(rng, Fixture::kWords))}));
        f.instance.label = forward(*f.model, f.instance, f.table).label;
        f.problem.synonyms.clear();
        for (const auto& t : day.tweets)
            f.problem.synonyms.push_back({{static_cast<TokenId>(1 + (t.tokens[0] + 3) % 30), static_cast<TokenId>(1 + (t.tokens[0] + 9) % 30)},
                                          {static_cast<TokenId>(1 + (t.tokens[1] + 5) % 30), static_cast<TokenId>(1 + (t.tokens[1] + 17) % 30)}});
        double best = -1;
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j)
                for (std::size_t k = 0; k < 2; ++k)
                    best = std::max(best, evaluate_hard(f.problem, HardPerturbation{{i}, {{{j, f.problem.synonyms[i][j][k]}}}}).loss);
        AttackResult r = solve_ago(f.problem, Budgets{1, 1, 2}, SolverConfig{});
        CHECK(std::abs(r.objective - best) <= 1e-6);
        ++checked;
    }
    CHECK(checked == 40);
}

TEST_CASE("solvers are deterministic and report consistent results") {
    for (auto mode : {AttackMode::Concatenate, AttackMode::Manipulate}) {
        Fixture f(VictimKind::FinLSTM, mode, PerturbKind::Replace, 11, 4, 5, 3);
        SolverConfig cfg;
        cfg.mode = mode;
        Budgets b{2, 2, 3};
        for (auto solve : {solve_jo, solve_ago}) {
            AttackResult a = solve(f.problem, b, cfg), c = solve(f.problem, b, cfg);
            CHECK(a.perturbation == c.perturbation);
            CHECK(a.trajectory == c.trajectory);
            CHECK(a.queries == c.queries);
            CHECK(a.trajectory.size() == cfg.iterations);
            CHECK(a.success_at_iter.size() == cfg.iterations);
            CHECK(a.success == (a.post_label != a.true_label));
            CHECK(a.perturbation.tweets.size() <= b.tweets);
            CHECK(a.objective == evaluate_hard(f.problem, a.perturbation).loss);
        }
        cfg.smoothing = true;
        AttackResult s1 = solve_jo(f.problem, b, cfg), s2 = solve_jo(f.problem, b, cfg);
        CHECK(s1.perturbation == s2.perturbation);
        CHECK(s1.trajectory == s2.trajectory);
        CHECK(random_attack(f.problem, b, 3).perturbation == random_attack(f.problem, b, 3).perturbation);
    }
}

TEST_CASE("AGO query count bound") {
    Fixture f(VictimKind::FinGRU, AttackMode::Concatenate, PerturbKind::Replace, 13, 5, 6, 3);
    SolverConfig cfg;
    Budgets b{2, 2, 3};
    AttackResult r = solve_ago(f.problem, b, cfg);
    std::size_t max_len = 0;
    for (const auto& row : f.problem.synonyms) max_len = std::max(max_len, row.size());
    CHECK(r.queries <= cfg.iterations * (f.problem.n_tweets() + b.tweets * max_len) + cfg.iterations * cfg.ago_u_steps);
}

TEST_CASE("pad-only candidates cannot move a zero-signal victim") {
    Fixture f(VictimKind::BagLinear, AttackMode::Concatenate, PerturbKind::Replace, 14);
    for (auto& row : f.problem.synonyms)
        for (auto& c : row)
            for (auto& id : c) id = Vocab::pad_id;
    for (double& p : f.model->params()) p = 0.0;
    f.instance.label = 1;
    Budgets b{1, 1, 3};
    CHECK_FALSE(solve_ago(f.problem, b, SolverConfig{}).success);
    CHECK_FALSE(solve_jo(f.problem, b, SolverConfig{}).success);
    for (std::uint64_t seed = 0; seed < 10; ++seed) CHECK_FALSE(random_attack(f.problem, b, seed).success);
}

TEST_CASE("misclassified instances are not attacked") {
    Fixture f(VictimKind::BagLinear, AttackMode::Concatenate, PerturbKind::Replace, 15);
    f.instance.label = -f.instance.label;
    Budgets b;
    CHECK_THROWS_AS(solve_jo(f.problem, b, SolverConfig{}), NotApplicable);
    CHECK_THROWS_AS(solve_ago(f.problem, b, SolverConfig{}), NotApplicable);
    CHECK_THROWS_AS(random_attack(f.problem, b, 1), NotApplicable);
    CHECK_THROWS_AS(brute_force_attack(f.problem), NotApplicable);
    CHECK_THROWS_AS((Budgets{0, 1, 1}.validate()), ConfigError);
    SolverConfig bad;
    bad.iterations = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("JO flips a trained bag victim where brute force can") {
    SynthConfig c = qs_test::small_synth();
    c.n_stocks = 6;
    DatasetConfig dc;
    dc.window = 0;
    SyntheticData d = gen_synthetic(c, 8, dc);
    VictimHyper h;
    h.embed_dim = c.dim;
    h.window = 0;
    auto model = make_victim(VictimKind::BagLinear, h, 1);
    TrainConfig tc;
    tc.epochs = 60;
    tc.lr = 0.02;
    train(*model, d.split, d.lexicon.table, tc);
    std::vector<TokenId> ids;
    for (std::size_t i = 1; i < d.lexicon.vocab.size(); ++i) ids.push_back(static_cast<TokenId>(i));
    SynonymTable syn = build_synonym_table(d.lexicon.table, ids, 5);
    std::size_t flippable = 0, jo_flips = 0;
    for (const auto& inst : d.split.test) {
        if (inst.anchor_tweets().tweets.size() != 1) continue;
        if (forward(*model, inst, d.lexicon.table).label != inst.label) continue;
        AttackProblem p = make_problem(*model, inst, d.lexicon.table, syn, Budgets{1, 1, 5}, AttackMode::Concatenate,
                                       PerturbKind::Replace, &d.lexicon.vocab);
        if (!brute_force_attack(p).success) continue;
        ++flippable;
        AttackResult r = solve_jo(p, Budgets{1, 1, 5}, SolverConfig{});
        jo_flips += r.success;
        if (r.success) {
            REQUIRE(r.adversarial_texts.size() == 1);
            CHECK(r.adversarial_texts[0] != r.original_texts[0]);
        }
    }
    MESSAGE("flippable ", flippable, ", JO flips ", jo_flips);
    CHECK(flippable > 0);
    CHECK(jo_flips > 0);
}
