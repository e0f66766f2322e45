#ifndef QUOTESTORM_VICTIM_HPP
#define QUOTESTORM_VICTIM_HPP

#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "quotestorm/dataset.hpp"
#include "quotestorm/text.hpp"

namespace quotestorm {

enum class VictimKind { BagLinear, FinGRU, FinLSTM };

std::string victim_name(VictimKind kind);  // "bag", "fingru", "finlstm"
std::optional<VictimKind> parse_victim(std::string_view name);

struct VictimHyper {
    std::size_t embed_dim = 50;
    std::size_t price_dim = kPriceFeatures;
    std::size_t hidden = 32;
    std::size_t window = 5;  // h; the model reads h+1 steps

    std::size_t steps() const { return window + 1; }
    std::size_t input_width() const { return embed_dim + price_dim; }
};

struct ParamBlock {
    std::string name;
    std::size_t offset = 0, rows = 0, cols = 0;
    std::size_t size() const { return rows * cols; }
};

// steps x width, row-major. Row d is concat(day pool, price features) of day t-h+d.
struct SequenceInput {
    std::size_t steps = 0, width = 0;
    std::vector<double> data;

    SequenceInput() = default;
    SequenceInput(std::size_t s, std::size_t w) : steps(s), width(w), data(s * w, 0.0) {}
    double* row(std::size_t d) { return data.data() + d * width; }
    const double* row(std::size_t d) const { return data.data() + d * width; }
};

// Per-step hidden states of the recurrent victims; for BagLinear each step's
// "state" is its input row.
struct ForwardTrace {
    std::vector<Vec> states;
    Vec attention;
};

class VictimModel {
public:
    virtual ~VictimModel() = default;

    VictimKind kind() const { return kind_; }
    std::string name() const { return victim_name(kind_); }
    const VictimHyper& hyper() const { return hyper_; }
    const std::vector<ParamBlock>& layout() const { return layout_; }
    std::span<const double> params() const { return params_; }
    std::span<double> params() { return params_; }

    // uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per block
    void init_params(std::uint64_t seed);

    // Throws ShapeError when `x` does not match the hyperparameters.
    double logit(const SequenceInput& x, ForwardTrace* trace = nullptr) const;

    // Reverse pass for d(logit) = dlogit. Adds dlogit * dlogit/dparams into
    // `dparams` when it is non-empty and writes dlogit * dlogit/dx into `dx`
    // when non-null. Returns the logit.
    double backward(const SequenceInput& x, double dlogit, std::span<double> dparams, SequenceInput* dx) const;

    virtual std::unique_ptr<VictimModel> clone() const = 0;

protected:
    VictimModel(VictimKind kind, const VictimHyper& hyper) : kind_(kind), hyper_(hyper) {}
    void add_block(const std::string& name, std::size_t rows, std::size_t cols, std::size_t fan_in);
    const double* block(std::size_t index) const { return params_.data() + layout_[index].offset; }

    virtual double forward_impl(const SequenceInput& x, ForwardTrace* trace) const = 0;
    virtual double backward_impl(const SequenceInput& x, double dlogit, double* dparams, SequenceInput* dx) const = 0;

    VictimKind kind_;
    VictimHyper hyper_;
    std::vector<ParamBlock> layout_;
    std::vector<std::size_t> fan_in_;
    std::vector<double> params_;
};

std::unique_ptr<VictimModel> make_victim(VictimKind kind, const VictimHyper& hyper, std::uint64_t seed);

// sign(logit), with 0 counted as up
inline int predict_label(double logit) { return logit >= 0.0 ? 1 : -1; }

// ------------------------------------------------------------ pooling

// Mean of non-pad token embeddings; zero for an all-pad tweet.
Vec pool_tweet(const Tweet& tweet, const EmbeddingTable& table);

enum class AttackMode { Concatenate, Manipulate };
enum class PerturbKind { Replace, Delete };

std::string mode_name(AttackMode mode);
std::optional<AttackMode> parse_mode(std::string_view name);
std::string kind_name(PerturbKind kind);
std::optional<PerturbKind> parse_kind(std::string_view name);

// A relaxed, perturbed copy of benign tweet `source`.
struct SoftCandidate {
    std::size_t source = 0;
    double inclusion = 0;                        // m_i
    std::vector<double> word_select;             // z_ij, one per token
    std::vector<std::vector<TokenId>> synonyms;  // candidates per position (empty when unsupported)
    std::vector<std::vector<double>> mix;        // replacement weights per position
};

// Day-t collection under attack. In concatenate mode each candidate is an
// extra tweet entering the day mean with weight m_i; in manipulate mode the
// candidate replaces its source tweet in place, each word mixed with
// coefficient m_i * z_ij.
struct SoftCollection {
    AttackMode mode = AttackMode::Concatenate;
    std::vector<Tweet> benign;
    std::vector<SoftCandidate> candidates;
};

// Pooled embedding of a candidate's perturbed tweet where position j mixes
// the original word and its replacements with coefficient coef[j]:
//   e_j = (1 - a_j) e(w_j) + a_j sum_k mix_jk e(s_jk)
// normalized by the non-pad mass sum_j (1 - a_j) + a_j sum_k mix_jk [s_jk != pad].
Vec pool_soft_tweet(const Tweet& tweet, std::span<const double> coef,
                    const std::vector<std::vector<TokenId>>& synonyms, const std::vector<std::vector<double>>& mix,
                    const EmbeddingTable& table);

Vec pool_day(const TweetCollection& day, const EmbeddingTable& table);
Vec pool_day(const SoftCollection& day, const EmbeddingTable& table);

// Input rows for the instance; when `soft` is given it replaces the anchor
// day's pool. Earlier rows never depend on `soft`.
SequenceInput build_input(const Instance& instance, const EmbeddingTable& table, const SoftCollection* soft = nullptr);
SequenceInput build_input(const Instance& instance, const EmbeddingTable& table, const TweetCollection& anchor_day);

struct Prediction {
    double logit = 0;
    double prob_up = 0.5;
    int label = 1;
};

Prediction forward(const VictimModel& model, const Instance& instance, const EmbeddingTable& table,
                   const SoftCollection* soft = nullptr);

// d(logit)/d(relaxation variables) of a soft collection.
struct SoftGradients {
    double logit = 0;
    std::vector<double> inclusion;                       // per candidate
    std::vector<std::vector<double>> word_select;        // per candidate, per position
    std::vector<std::vector<std::vector<double>>> mix;   // per candidate, position, replacement
};

// Reverse pass of pool_day for upstream gradient `g_pool`.
SoftGradients backward_pool_day(const SoftCollection& day, const EmbeddingTable& table, std::span<const double> g_pool);

SoftGradients grad_attack_vars(const VictimModel& model, const Instance& instance, const EmbeddingTable& table,
                               const SoftCollection& soft);

// ------------------------------------------------------------- training

struct TrainConfig {
    double lr = 0.005;
    std::size_t epochs = 100;
    std::size_t batch_size = 32;
    std::uint64_t seed = 7;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    // Checkpoint selection set: 0 selects on the test split; otherwise this
    // trailing fraction of the (date-ordered) train split is held out.
    double holdout_fraction = 0.0;
};

struct BinaryMetrics {
    std::size_t n = 0;
    double accuracy = 0;
    double f1 = 0;  // positive class = up
};

// F1 with the up class positive. With no positive predictions and no
// positive labels the score is 1 (nothing to get wrong).
BinaryMetrics binary_metrics(std::span<const int> predictions, std::span<const int> labels);

struct TrainReport {
    std::size_t best_epoch = 0;
    BinaryMetrics train, test, selection;
    std::vector<double> epoch_loss;
    std::vector<double> epoch_selection_accuracy;
};

// Throws ConfigError on a bad config or empty split, TrainingDiverged on a
// non-finite loss.
TrainReport train(VictimModel& model, const DatasetSplit& split, const EmbeddingTable& table, const TrainConfig& cfg);

BinaryMetrics evaluate(const VictimModel& model, std::span<const Instance> instances, const EmbeddingTable& table);

// Mean binary cross-entropy of the batch; writes the mean gradient into
// `grad` (resized to the parameter count). The OpenMP kernel reduces
// per-sample gradients in sample order so it matches the serial reference bit for bit.
double batch_loss_gradient(const VictimModel& model, std::span<const SequenceInput* const> inputs,
                           std::span<const int> labels, std::vector<double>& grad);
double batch_loss_gradient_serial(const VictimModel& model, std::span<const SequenceInput* const> inputs,
                                  std::span<const int> labels, std::vector<double>& grad);

// ----------------------------------------------------------- checkpoints

inline constexpr int kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, const VictimModel& model, const std::string& vocab_hash);
// Throws IncompatibleArtifacts when `expected_vocab_hash` is given and differs.
std::unique_ptr<VictimModel> load_checkpoint(const std::string& path,
                                             const std::optional<std::string>& expected_vocab_hash = std::nullopt);

}  // namespace quotestorm

#endif  // QUOTESTORM_VICTIM_HPP
