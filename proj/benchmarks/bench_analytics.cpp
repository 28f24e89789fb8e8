#include <benchmark/benchmark.h>

#include <random>

#include "aicollab/analytics.hpp"
#include "aicollab/event_store.hpp"

using namespace aicollab;

namespace {

void bm_compute_analytics(benchmark::State& state) {
  EventStore store;
  nlohmann::json roster = nlohmann::json::array();
  for (int i = 0; i < 4; ++i) {
    roster.push_back({{"participant_id", "p" + std::to_string(i)}, {"display_name", "P"}, {"is_bot", false}});
  }
  store.append("s", EventKind::session_start, 0, std::nullopt, {{"participants", roster}});
  std::mt19937_64 rng(4);
  for (int i = 0; i < state.range(0); ++i) {
    store.append("s", EventKind::message, i * 10.0, "p" + std::to_string(rng() % 4),
                 {{"text", "we agreed on the budget for the venue"}});
  }
  const auto events = store.events("s");
  for (auto _ : state) benchmark::DoNotOptimize(compute_analytics(events));
}
BENCHMARK(bm_compute_analytics)->Arg(200)->Arg(2000);

}  // namespace
