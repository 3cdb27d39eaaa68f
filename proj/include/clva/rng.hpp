#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace clva {

/// Seeded random source whose full state can be captured and restored.
/// Sampling and cropping draw from an explicitly passed Rng so that a run
/// can be resumed from a checkpoint with an identical data order.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    /// Uniform integer in [lo, hi].
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    /// Uniform real in [lo, hi).
    double uniform_real(double lo = 0.0, double hi = 1.0);
    double normal(double mean = 0.0, double stddev = 1.0);

    std::mt19937_64& engine() { return engine_; }

    std::string serialize() const;
    static Rng deserialize(const std::string& state);

    bool operator==(const Rng& other) const { return engine_ == other.engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace clva
