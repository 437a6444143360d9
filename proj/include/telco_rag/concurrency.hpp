#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

#include "error.hpp"

namespace telco_rag {

/// Runs fn(i) for i in [0, n) on at most `max_workers` threads. The first
/// exception escaping fn is rethrown after all workers join.
inline void bounded_parallel_for(std::size_t n, std::size_t max_workers,
                                 const std::function<void(std::size_t)>& fn) {
    if (n == 0) return;
    const std::size_t workers = std::clamp<std::size_t>(max_workers, 1, n);
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mu;
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mu);
                    if (!first_error) first_error = std::current_exception();
                }
            }
        });
    }
    pool.clear();
    if (first_error) std::rethrow_exception(first_error);
}

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{500};
    double multiplier = 2.0;
    double jitter = 0.25; // +/- fraction of each delay

    static RetryPolicy none() { return {1, std::chrono::milliseconds{0}, 1.0, 0.0}; }
    static RetryPolicy immediate(int attempts) { return {attempts, std::chrono::milliseconds{0}, 1.0, 0.0}; }
};

/// Calls fn until it returns or `policy.attempts` ProviderErrors have been
/// seen; other exception types propagate immediately.
template <class Fn>
auto with_retries(const RetryPolicy& policy, Fn&& fn) -> decltype(fn()) {
    thread_local std::minstd_rand jitter_rng{std::random_device{}()};
    double delay_ms = static_cast<double>(policy.initial_backoff.count());
    for (int attempt = 1;; ++attempt) {
        try {
            return fn();
        } catch (const ProviderError&) {
            if (attempt >= policy.attempts) throw;
        }
        if (delay_ms > 0) {
            std::uniform_real_distribution<double> u(1.0 - policy.jitter, 1.0 + policy.jitter);
            std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(delay_ms * u(jitter_rng)));
        }
        delay_ms *= policy.multiplier;
    }
}

} // namespace telco_rag
