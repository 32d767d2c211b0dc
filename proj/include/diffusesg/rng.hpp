#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dsg {

// Deterministic counter-free PRNG (xoshiro256**). The standard library
// distributions are implementation-defined, so uniform/normal transforms are
// done by hand to keep runs byte-identical across toolchains.
class Rng {
public:
    explicit Rng(uint64_t seed);

    uint64_t next_u64();
    // Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);
    // Standard normal via Box-Muller (two uniforms per draw, no cached spare).
    double normal();
    double normal(double mean, double stddev);
    // Uniform integer in [lo, hi] inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi);

    // Derive an independent stream; the same (seed, name, index) always yields
    // the same stream. Every source of randomness in a run hangs off one root
    // seed through these.
    Rng substream(const std::string& name, uint64_t index = 0) const;

    std::vector<uint64_t> state() const;
    void set_state(const std::vector<uint64_t>& s);

private:
    uint64_t state_[4];
    uint64_t root_seed_;
};

}  // namespace dsg
