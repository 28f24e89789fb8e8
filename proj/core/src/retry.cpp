#include "aicollab/retry.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

namespace aicollab {

void sleep_real(std::chrono::milliseconds d) {
  if (d.count() > 0) std::this_thread::sleep_for(d);
}

std::chrono::milliseconds RetryPolicy::backoff(int retry, double unit) const {
  const double raw = static_cast<double>(base_delay.count()) * std::pow(factor, std::max(0, retry));
  const double capped = std::min(raw, static_cast<double>(max_delay.count()));
  const double scale = 1.0 - std::clamp(jitter, 0.0, 1.0) * std::clamp(unit, 0.0, 1.0);
  return std::chrono::milliseconds(static_cast<std::int64_t>(std::llround(capped * scale)));
}

Retrier::Retrier(RetryPolicy policy, Sleeper sleeper, std::uint64_t seed)
    : policy_(policy), sleeper_(sleeper ? std::move(sleeper) : Sleeper(sleep_real)), rng_(seed) {}

double Retrier::draw() {
  std::lock_guard lock(rng_mutex_);
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
}

}  // namespace aicollab
