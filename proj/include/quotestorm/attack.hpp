#ifndef QUOTESTORM_ATTACK_HPP
#define QUOTESTORM_ATTACK_HPP

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "quotestorm/util.hpp"
#include "quotestorm/victim.hpp"

namespace quotestorm {

struct Budgets {
    std::size_t tweets = 1;      // b_s
    std::size_t words = 1;       // b_w
    std::size_t candidates = 5;  // n_u

    void validate() const;  // ConfigError unless all >= 1
};

// Replacement candidates per (tweet, position) of the anchor day. An empty
// entry marks a position that cannot be attacked (pad/OOV or no synonym set).
using AttackSynonyms = std::vector<std::vector<std::vector<TokenId>>>;

// m: one entry per tweet; z and u_raw are ragged, one row per tweet with one
// entry per token position. u_raw[i][j] has one logit per candidate of (i, j).
struct RelaxedVars {
    Vec m;
    std::vector<Vec> z;
    std::vector<std::vector<Vec>> u_raw;
};

// Row-wise softmax of u_raw.
std::vector<std::vector<Vec>> mix_weights(const RelaxedVars& vars);

// Projection onto {v in [0,1]^n : sum(v) <= b}. Bisects the shift to 1e-12
// and returns the side that keeps the sum within the budget.
Vec project_capped_box_simplex(std::span<const double> v, double budget);

struct SolverConfig {
    std::size_t iterations = 10;
    double eta_m = 0.5, eta_z = 0.5, eta_u = 1.0;
    double lambda = 0.1;  // sparsity weight; 0 disables the regularizer
    bool smoothing = false;
    double sigma = 0.1;
    std::size_t n_samples = 10;
    PerturbKind kind = PerturbKind::Replace;
    AttackMode mode = AttackMode::Concatenate;
    std::uint64_t seed = 1;
    // AGO: gradient steps on u_raw per round.
    std::size_t ago_u_steps = 3;

    void validate() const;
};

// Everything a solver needs about one instance: the anchor-day tweets, the
// candidates of every position and which positions are attackable.
struct AttackProblem {
    const VictimModel* model = nullptr;
    const Instance* instance = nullptr;
    const EmbeddingTable* table = nullptr;
    const Vocab* vocab = nullptr;  // only for rendering adversarial text
    AttackMode mode = AttackMode::Concatenate;
    PerturbKind kind = PerturbKind::Replace;
    AttackSynonyms synonyms;

    std::size_t n_tweets() const { return synonyms.size(); }
    std::size_t n_valid(std::size_t tweet) const;
    bool valid(std::size_t tweet, std::size_t pos) const { return !synonyms[tweet][pos].empty(); }
    const TweetCollection& day() const { return instance->anchor_tweets(); }
};

// Candidates are the first `budgets.candidates` entries of each word's
// synonym set; with kind=delete every attackable position gets {pad}.
// Any non-pad word is attackable under deletion.
AttackProblem make_problem(const VictimModel& model, const Instance& instance, const EmbeddingTable& table,
                           const SynonymTable& synonyms, const Budgets& budgets, AttackMode mode, PerturbKind kind,
                           const Vocab* vocab = nullptr);

// Zero-initialized variables shaped for the problem.
RelaxedVars zero_vars(const AttackProblem& problem);

// Builds the relaxed day-t collection. With kind=delete the mix weight sits
// entirely on the pad candidate whatever u_raw says. Throws SynonymGapError
// when z puts weight on a position without candidates.
SoftCollection apply_perturbation(const TweetCollection& day, const RelaxedVars& vars, const AttackSynonyms& synonyms,
                                  AttackMode mode, PerturbKind kind);
// Same, with explicit mix weights in place of softmax(u_raw).
SoftCollection apply_perturbation(const TweetCollection& day, const RelaxedVars& vars,
                                  const std::vector<std::vector<Vec>>& mix, const AttackSynonyms& synonyms,
                                  AttackMode mode, PerturbKind kind);

struct ObjectiveValue {
    double value = 0;       // J
    double loss = 0;        // cross-entropy part
    double penalty = 0;     // R
    RelaxedVars grad;       // dJ/d(m, z, u_raw)
    RelaxedVars loss_grad;  // same for the cross-entropy part alone
    std::vector<std::vector<Vec>> grad_mix;  // dJ/d(mix weights), before the softmax chain
    std::size_t queries = 0;
};

// R = sum over m and attackable z entries of min(v, 1 - v).
double sparsity_penalty(const AttackProblem& problem, const RelaxedVars& vars);

// J = CE(true label) - lambda * R at `vars`; with cfg.smoothing (and sigma > 0)
// the mean over cfg.n_samples evaluations at noisy copies of the variables,
// the noise drawn from `rng`.
ObjectiveValue attack_objective(const AttackProblem& problem, const RelaxedVars& vars, const SolverConfig& cfg,
                                Rng* rng = nullptr, bool with_grad = true);

// Cross-entropy of the true label given a logit.
double label_loss(double logit, int label);

// A discrete perturbation: selected tweets (ascending), and per selected
// tweet the edited positions (ascending) with their replacement tokens.
struct HardPerturbation {
    std::vector<std::size_t> tweets;
    std::vector<std::vector<std::pair<std::size_t, TokenId>>> edits;

    bool operator==(const HardPerturbation&) const = default;
};

// Applies the perturbation to the anchor-day collection (appends quote tweets
// or edits in place, depending on the mode). Deleted words become pad.
TweetCollection perturbed_day(const AttackProblem& problem, const HardPerturbation& p);

// The relaxed variables corresponding to `p`: binary m and z, and u_raw of 0
// on the chosen candidate and -1000 elsewhere, whose softmax is exactly one-hot.
RelaxedVars one_hot_vars(const AttackProblem& problem, const HardPerturbation& p);

struct HardEval {
    double logit = 0;
    int label = 1;
    double loss = 0;  // CE of the true label; equals J since R = 0 for binary vars
};

HardEval evaluate_hard(const AttackProblem& problem, const HardPerturbation& p);

struct AttackResult {
    std::size_t instance_id = 0;
    std::string stock;
    std::string date;
    std::string solver;
    std::string mode;
    std::string kind;
    HardPerturbation perturbation;
    std::vector<std::string> original_texts;     // selected tweets before
    std::vector<std::string> adversarial_texts;  // and after the edit
    int true_label = 0;
    int pre_label = 0, post_label = 0;
    double pre_logit = 0, post_logit = 0;
    double objective = 0;  // J of the returned hard perturbation
    bool success = false;
    // Relaxed loss after iterations 1..N over the loss at the start point
    // (so the implicit value at iteration 0 is 1). AGO pads with its last
    // value when it stops early.
    Vec trajectory;
    // Success of the discretized iterate after iterations 1..N.
    std::vector<bool> success_at_iter;
    std::size_t queries = 0;
    std::optional<std::size_t> iterations_to_success;
    std::string error;  // non-empty when the solver failed on this instance
};

// Prediction and loss of the unperturbed instance; NotApplicable when misclassified.
HardEval check_applicable(const AttackProblem& problem);

// Top-k indices by value over the entries where `allowed` holds (or all
// when empty), ties to the lower index; result ascending.
std::vector<std::size_t> top_k(std::span<const double> values, std::size_t k, const std::vector<bool>& allowed = {});

// Top-b_s tweets by m, top-b_w attackable positions by z, argmax of the mix weights.
HardPerturbation discretize(const AttackProblem& problem, const RelaxedVars& vars, const Budgets& budgets);

AttackResult solve_jo(const AttackProblem& problem, const Budgets& budgets, const SolverConfig& cfg);
AttackResult solve_ago(const AttackProblem& problem, const Budgets& budgets, const SolverConfig& cfg);
AttackResult random_attack(const AttackProblem& problem, const Budgets& budgets, std::uint64_t seed);

inline constexpr std::size_t kBruteForceLimit = 10000;

// Exhaustive search over single (tweet, word, candidate) edits, plus the plain
// retweet of tweets without attackable words. Throws TooLarge when
// n_tweets * max_len * n_u exceeds `limit`.
AttackResult brute_force_attack(const AttackProblem& problem, std::size_t limit = kBruteForceLimit);

// Result for the unattacked instance (the NA baseline).
AttackResult no_attack(const AttackProblem& problem);

}  // namespace quotestorm

#endif  // QUOTESTORM_ATTACK_HPP
