#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <mutex>
#include <random>
#include <utility>

#include "aicollab/error.hpp"

namespace aicollab {

using Sleeper = std::function<void(std::chrono::milliseconds)>;

void sleep_real(std::chrono::milliseconds d);

// Exponential backoff with multiplicative jitter. Defaults: 500 ms base,
// factor 2, 4 attempts in total, 30 s overall deadline.
struct RetryPolicy {
  std::chrono::milliseconds base_delay{500};
  double factor = 2.0;
  int max_attempts = 4;
  double jitter = 0.25;  // delay scaled by a uniform draw from [1 - jitter, 1]
  std::chrono::milliseconds max_delay{8000};
  std::chrono::milliseconds deadline{30000};

  // Delay before retry number `retry` (0 = first retry); `unit` in [0, 1).
  std::chrono::milliseconds backoff(int retry, double unit) const;
};

// Runs a callable under a RetryPolicy. The callable receives the 1-based
// attempt number. Only RemoteErrors with retryable() kinds are retried; a
// server-advised retry_after overrides the computed backoff.
class Retrier {
 public:
  explicit Retrier(RetryPolicy policy = {}, Sleeper sleeper = {}, std::uint64_t seed = std::random_device{}());

  const RetryPolicy& policy() const noexcept { return policy_; }

  template <class F>
  auto run(F&& fn) -> decltype(fn(1)) {
    using clock = std::chrono::steady_clock;
    std::chrono::milliseconds spent{0};
    for (int attempt = 1;; ++attempt) {
      const auto started = clock::now();
      try {
        return fn(attempt);
      } catch (RemoteError& e) {
        spent += std::chrono::duration_cast<std::chrono::milliseconds>(clock::now() - started);
        e.set_attempts(attempt);
        if (!e.retryable() || attempt >= policy_.max_attempts) throw;
        const auto delay = e.retry_after().value_or(policy_.backoff(attempt - 1, draw()));
        if (spent + delay > policy_.deadline) {
          RemoteError timeout(RemoteErrorKind::timeout,
                              "deadline exceeded after " + std::to_string(attempt) + " attempts; last error: " + e.what());
          timeout.set_attempts(attempt);
          throw timeout;
        }
        sleeper_(delay);
        spent += delay;
      }
    }
  }

 private:
  double draw();

  RetryPolicy policy_;
  Sleeper sleeper_;
  std::mutex rng_mutex_;
  std::mt19937_64 rng_;
};

}  // namespace aicollab
