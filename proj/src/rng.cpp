#include "diffusesg/rng.hpp"

#include <cmath>

#include "diffusesg/common.hpp"

namespace dsg {

namespace {

uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(uint64_t seed) : root_seed_(seed) {
    uint64_t sm = seed;
    for (auto& w : state_) w = splitmix64(sm);
}

uint64_t Rng::next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
}

double Rng::uniform() {
    // 53 mantissa bits -> [0, 1)
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
    // Guard against log(0).
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

double Rng::normal(double mean, double stddev) { return mean + stddev * normal(); }

int64_t Rng::uniform_int(int64_t lo, int64_t hi) {
    check_contract(lo <= hi, "uniform_int: empty range");
    const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    // Rejection sampling to avoid modulo bias.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t v = 0;
    do {
        v = next_u64();
    } while (v >= limit && span != 0);
    return lo + static_cast<int64_t>(v % span);
}

Rng Rng::substream(const std::string& name, uint64_t index) const {
    uint64_t mix = root_seed_;
    mix ^= rotl(fnv1a(name), 13);
    mix ^= splitmix64(mix) + index * 0x9e3779b97f4a7c15ULL;
    Rng child(mix);
    child.root_seed_ = mix;
    return child;
}

std::vector<uint64_t> Rng::state() const {
    return {state_[0], state_[1], state_[2], state_[3], root_seed_};
}

void Rng::set_state(const std::vector<uint64_t>& s) {
    check_contract(s.size() == 5, "Rng::set_state: bad state size");
    for (int i = 0; i < 4; ++i) state_[i] = s[static_cast<size_t>(i)];
    root_seed_ = s[4];
}

}  // namespace dsg
