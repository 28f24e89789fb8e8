#include <benchmark/benchmark.h>

#include <string>

#include "aicollab/embedding.hpp"

using namespace aicollab;

namespace {

void bm_embed_text(benchmark::State& state) {
  const LocalHashEmbedder embedder;
  std::string text;
  for (int i = 0; i < state.range(0); ++i) text += "budget venue timeline ";
  for (auto _ : state) benchmark::DoNotOptimize(embedder.embed_text(text));
  state.SetBytesProcessed(state.iterations() * static_cast<std::int64_t>(text.size()));
}
BENCHMARK(bm_embed_text)->Arg(4)->Arg(64);

}  // namespace
