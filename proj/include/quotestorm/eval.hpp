#ifndef QUOTESTORM_EVAL_HPP
#define QUOTESTORM_EVAL_HPP

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "quotestorm/attack.hpp"
#include "quotestorm/simulate.hpp"

namespace quotestorm {

enum class SolverKind { NA, RA, JO, AGO, Brute };

std::string solver_name(SolverKind s);  // "na", "ra", "jo", "ago", "brute"
std::optional<SolverKind> parse_solver(std::string_view name);

// 100 * successes / results. Sets *empty (when given) for an empty input, which scores 0.
double asr(std::span<const AttackResult> results, bool* empty = nullptr);

// Binary F1 (up positive) of post-attack predictions against the true labels.
double f1_post_attack(std::span<const AttackResult> results);

struct BenchmarkSpec {
    std::vector<std::string> victims;  // keys into the model map
    std::vector<SolverKind> solvers{SolverKind::NA, SolverKind::RA, SolverKind::JO, SolverKind::AGO};
    std::vector<AttackMode> modes{AttackMode::Concatenate};
    std::vector<PerturbKind> kinds{PerturbKind::Replace};
    std::vector<std::pair<std::size_t, std::size_t>> budgets{{1, 1}};  // (b_s, b_w)
    std::vector<std::uint64_t> seeds{1};
    std::size_t n_u = 5;
    SolverConfig solver;  // mode, kind and seed are overridden per config
    std::size_t max_instances = 0;  // 0 = every eligible test instance
    std::size_t brute_limit = kBruteForceLimit;

    // Throws ConfigError on an empty axis; adds NA when missing.
    void validate();
};

struct ConfigKey {
    std::string victim, solver, mode, kind;
    std::size_t b_s = 1, b_w = 1;
    std::uint64_t seed = 1;

    std::string str() const;  // e.g. fingru/jo/concatenate/replace/1x1/s1
    auto operator<=>(const ConfigKey&) const = default;
};

struct MetricsRow {
    ConfigKey key;
    std::size_t n_instances = 0;
    std::size_t n_errors = 0;
    double asr = 0;
    double f1_post = 1;
    double mean_queries = 0;
    // Mean over successful instances that report it; nullopt when none do.
    std::optional<double> mean_iterations_to_success;
};

struct TrajectoryRow {
    ConfigKey key;
    std::size_t iteration = 0;  // 1..N
    double mean_normalized_loss = 0;
    double asr_at_iter = 0;
};

struct BenchmarkOutput {
    std::vector<MetricsRow> rows;                       // sorted by key
    std::vector<TrajectoryRow> trajectories;            // JO/AGO configs only
    std::vector<std::pair<ConfigKey, AttackResult>> results;  // sorted by (key, instance id)
    // Test-set predictions per victim before attack, and with the attacked
    // instances of each config replaced by their post-attack prediction.
    std::map<std::string, Predictions> benign_predictions;
    std::map<ConfigKey, Predictions> attacked_predictions;
};

struct BenchmarkInputs {
    const DatasetSplit* split = nullptr;
    const EmbeddingTable* table = nullptr;
    const Vocab* vocab = nullptr;
    const SynonymTable* synonyms = nullptr;
    std::map<std::string, const VictimModel*> models;
};

// Test instances with a non-empty anchor day that `model` classifies correctly, by id.
std::vector<const Instance*> attackable_instances(const VictimModel& model, const DatasetSplit& split,
                                                  const EmbeddingTable& table, std::size_t max_instances = 0);

// Fans out over (config, instance) with OpenMP; the serial reference gives identical output.
BenchmarkOutput run_benchmark(BenchmarkSpec spec, const BenchmarkInputs& inputs);
BenchmarkOutput run_benchmark_serial(BenchmarkSpec spec, const BenchmarkInputs& inputs);

// Attacks one instance under one config; solver errors are returned in result.error.
AttackResult attack_instance(const ConfigKey& key, const BenchmarkSpec& spec, const BenchmarkInputs& inputs,
                             const Instance& instance);

MetricsRow summarize(const ConfigKey& key, std::span<const AttackResult> results);

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics_csv(const std::string& path);
void write_trajectories_csv(const std::string& path, const std::vector<TrajectoryRow>& rows);
// b_s, b_w, asr per (victim, solver, mode, kind, seed).
void write_budget_curves_csv(const std::string& path, const std::vector<MetricsRow>& rows);
void write_results_jsonl(const std::string& path, const std::vector<std::pair<ConfigKey, AttackResult>>& results);

inline constexpr const char* kResultSchema = "quotestorm.attack_result/1";

// Text summary: one line per config with ASR and F1.
std::string format_summary(const std::vector<MetricsRow>& rows);

// Markdown documentation of every report column.
std::string report_columns_markdown();

}  // namespace quotestorm

#endif  // QUOTESTORM_EVAL_HPP
