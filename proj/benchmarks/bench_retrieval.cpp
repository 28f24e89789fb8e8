#include <benchmark/benchmark.h>

#include <memory>
#include <random>

#include "aicollab/memory.hpp"

using namespace aicollab;

namespace {

EmbeddingVector random_unit(std::mt19937_64& rng, std::size_t dim) {
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<double> v(dim);
  for (auto& x : v) x = n(rng);
  return EmbeddingVector(std::move(v));
}

std::unique_ptr<MemoryStore> make_store(std::size_t n, std::size_t dim) {
  auto store = std::make_unique<MemoryStore>(MemoryStoreConfig{dim, kDefaultImportanceWindow, "bench"});
  std::mt19937_64 rng(1);
  for (std::size_t i = 0; i < n; ++i) {
    store->append_observation("m", "p", "c", static_cast<double>(i) * 60.0, random_unit(rng, dim));
  }
  return store;
}

void bm_retrieve_top_k(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto store = make_store(n, 256);
  std::mt19937_64 rng(2);
  RetrievalQuery q;
  q.query_embedding = random_unit(rng, 256);
  q.now = static_cast<double>(n) * 60.0;
  for (auto _ : state) benchmark::DoNotOptimize(store->retrieve_top_k(q));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}
BENCHMARK(bm_retrieve_top_k)->Arg(1000)->Arg(10000);

void bm_append_observation(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto e = random_unit(rng, 256);
  MemoryStore store(MemoryStoreConfig{256, kDefaultImportanceWindow, "bench"});
  double t = 0.0;
  for (auto _ : state) benchmark::DoNotOptimize(store.append_observation("m", "p", "c", t += 1.0, e));
}
BENCHMARK(bm_append_observation);

}  // namespace
