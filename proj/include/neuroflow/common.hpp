#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Core>

namespace neuroflow {

using index_t = std::ptrdiff_t;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Library error. `kind` is a short machine-readable tag ("dimension",
/// "disconnected", "singular", ...) surfaced by the CLI error JSON.
class Error : public std::runtime_error
{
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(what), kind_(std::move(kind))
    {
    }

    const std::string& kind() const noexcept { return kind_; }

private:
    std::string kind_;
};

inline void require_length(index_t got, index_t expected, std::string_view what)
{
    if (got != expected)
        throw Error("dimension", std::string(what) + ": expected length " + std::to_string(expected) +
                                     ", got " + std::to_string(got));
}

struct Point2
{
    double x = 0.0;
    double y = 0.0;

    friend bool operator==(const Point2&, const Point2&) = default;
};

inline double distance(const Point2& a, const Point2& b)
{
    return std::hypot(a.x - b.x, a.y - b.y);
}

// splitmix64 finalizer; stable across platforms and compilers.
inline std::uint64_t mix64(std::uint64_t z)
{
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

/// Derived seed for (seed, purpose, indices...). Purposes are hashed with
/// FNV-1a so the mapping never depends on std::hash.
template <typename... Ix>
std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, Ix... indices)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : purpose)
        h = (h ^ static_cast<unsigned char>(c)) * 0x100000001b3ULL;
    std::uint64_t z = mix64(seed ^ mix64(h));
    ((z = mix64(z ^ static_cast<std::uint64_t>(indices))), ...);
    return z;
}

/// Worker count from NEUROFLOW_WORKERS, falling back to hardware concurrency.
inline unsigned default_workers()
{
    if (const char* env = std::getenv("NEUROFLOW_WORKERS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && v > 0)
            return static_cast<unsigned>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(i) for i in [0, count) on up to `workers` threads. Each index is
/// processed exactly once; callers write into per-index slots so results do
/// not depend on scheduling.
inline void parallel_for(std::size_t count, unsigned workers, const std::function<void(std::size_t)>& fn)
{
    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(count)));
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i)
            fn(i);
        return;
    }
    std::vector<std::exception_ptr> errors(count);
    {
        std::vector<std::jthread> pool;
        pool.reserve(workers);
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t i = w; i < count; i += workers) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
    }
    for (auto& e : errors)
        if (e)
            std::rethrow_exception(e);
}

} // namespace neuroflow
