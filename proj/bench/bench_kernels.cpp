// OpenMP kernels against their serial references.

#include <benchmark/benchmark.h>

#include "quotestorm/eval.hpp"

using namespace quotestorm;

namespace {

EmbeddingTable random_table(std::size_t words, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<double> rows(dim, 0.0);
    for (std::size_t i = 0; i < words * dim; ++i) rows.push_back(normal01(rng));
    return EmbeddingTable(dim, rows);
}

template <bool Parallel>
void BM_SynonymTable(benchmark::State& state) {
    const auto words = static_cast<std::size_t>(state.range(0));
    EmbeddingTable table = random_table(words, 50, 1);
    std::vector<TokenId> ids;
    for (std::size_t i = 1; i <= words; ++i) ids.push_back(static_cast<TokenId>(i));
    for (auto _ : state) {
        SynonymTable t = Parallel ? build_synonym_table(table, ids, 5) : build_synonym_table_serial(table, ids, 5);
        benchmark::DoNotOptimize(t);
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(words));
}

struct TrainingBatch {
    SyntheticData data;
    std::unique_ptr<VictimModel> model;
    std::vector<SequenceInput> inputs;
    std::vector<const SequenceInput*> ptrs;
    std::vector<int> labels;

    TrainingBatch() {
        SynthConfig c;
        data = gen_synthetic(c, 3);
        VictimHyper h;
        h.embed_dim = c.dim;
        model = make_victim(VictimKind::FinGRU, h, 1);
        for (std::size_t i = 0; i < 256 && i < data.split.train.size(); ++i) {
            inputs.push_back(build_input(data.split.train[i], data.lexicon.table));
            labels.push_back(data.split.train[i].label);
        }
        for (const auto& x : inputs) ptrs.push_back(&x);
    }
};

TrainingBatch& batch() {
    static TrainingBatch b;
    return b;
}

template <bool Parallel>
void BM_BatchGradient(benchmark::State& state) {
    auto& b = batch();
    std::vector<double> grad;
    for (auto _ : state) {
        double loss = Parallel ? batch_loss_gradient(*b.model, b.ptrs, b.labels, grad)
                               : batch_loss_gradient_serial(*b.model, b.ptrs, b.labels, grad);
        benchmark::DoNotOptimize(loss);
    }
    state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(b.ptrs.size()));
}

struct AttackBench {
    SyntheticData data;
    std::unique_ptr<VictimModel> model;
    SynonymTable synonyms;
    BenchmarkInputs inputs;
    BenchmarkSpec spec;

    AttackBench() {
        SynthConfig c;
        c.n_stocks = 4;
        data = gen_synthetic(c, 5);
        VictimHyper h;
        h.embed_dim = c.dim;
        model = make_victim(VictimKind::FinGRU, h, 2);
        TrainConfig tc;
        tc.epochs = 5;
        train(*model, data.split, data.lexicon.table, tc);
        std::vector<TokenId> ids;
        for (std::size_t i = 1; i < data.lexicon.vocab.size(); ++i) ids.push_back(static_cast<TokenId>(i));
        synonyms = build_synonym_table(data.lexicon.table, ids, 5);
        inputs.split = &data.split;
        inputs.table = &data.lexicon.table;
        inputs.vocab = &data.lexicon.vocab;
        inputs.synonyms = &synonyms;
        inputs.models["fingru"] = model.get();
        spec.victims = {"fingru"};
        spec.solvers = {SolverKind::RA, SolverKind::JO};
        spec.max_instances = 64;
    }
};

AttackBench& attack_bench() {
    static AttackBench b;
    return b;
}

template <bool Parallel>
void BM_RunBenchmark(benchmark::State& state) {
    auto& b = attack_bench();
    for (auto _ : state) {
        BenchmarkOutput out = Parallel ? run_benchmark(b.spec, b.inputs) : run_benchmark_serial(b.spec, b.inputs);
        benchmark::DoNotOptimize(out);
    }
}

}  // namespace

BENCHMARK(BM_SynonymTable<true>)->Name("synonym_table/openmp")->Arg(2000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_SynonymTable<false>)->Name("synonym_table/serial")->Arg(2000)->Arg(10000)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradient<true>)->Name("batch_gradient/openmp")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_BatchGradient<false>)->Name("batch_gradient/serial")->Unit(benchmark::kMillisecond);
BENCHMARK(BM_RunBenchmark<true>)->Name("run_benchmark/openmp")->Unit(benchmark::kMillisecond)->Iterations(3);
BENCHMARK(BM_RunBenchmark<false>)->Name("run_benchmark/serial")->Unit(benchmark::kMillisecond)->Iterations(3);

BENCHMARK_MAIN();
