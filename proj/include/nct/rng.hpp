#pragma once

#include <cstdint>
#include <random>

namespace nct {

// splitmix64, the usual seed-scrambling finalizer. Good enough to decorrelate
// the per-step / per-purpose engine seeds derived below.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Purpose tags for independent deterministic streams. Keeping streams separate
// means optional work (e.g. auxiliary batches that are skipped when their loss
// weight is zero) never shifts the draws of unrelated consumers.
enum class Stream : std::uint64_t {
    kParamInit = 1,
    kSentBatch = 2,
    kBctBatch = 3,
    kUdBilingual = 4,
    kSdBilingual = 5,
    kUdMonoSrc = 6,
    kUdMonoTgt = 7,
    kSdMonoSrc = 8,
    kSdMonoTgt = 9,
    kDropout = 10,
    kEval = 11,
    kSynthetic = 12,
};

// Engine for (seed, stage, step, purpose). Every training step reseeds its
// engines through this, so resuming from a checkpoint at step k replays the
// exact draws of an uninterrupted run.
inline std::mt19937_64 stream_rng(std::uint64_t seed, std::uint64_t stage,
                                  std::uint64_t step, Stream purpose) {
    std::uint64_t s = splitmix64(seed);
    s = splitmix64(s ^ (stage * 0x9e3779b97f4a7c15ULL));
    s = splitmix64(s ^ (step + 0x165667b19e3779f9ULL));
    s = splitmix64(s ^ static_cast<std::uint64_t>(purpose));
    return std::mt19937_64(s);
}

// Uniform integer in [0, n). n must be > 0.
inline std::size_t rand_index(std::mt19937_64& rng, std::size_t n) {
    return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline double rand_uniform(std::mt19937_64& rng) {
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace nct
