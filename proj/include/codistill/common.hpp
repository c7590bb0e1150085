#pragma once

// Shared basic types and deterministic RNG plumbing used across the library.
//
// All randomness flows through mt19937_64 engines seeded via derive_seed(),
// which mixes a base seed with a purpose tag and index path (splitmix64
// finalizer).  This keeps every stream (generation, prompt sampling,
// evaluation, verification) independent and reproducible regardless of how
// work is scheduled.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace codistill {

inline constexpr const char* kVersion = "0.1.0";

using PromptId = int;
using TokenSequence = std::vector<int>;

// Flat view of one policy's logit table; the owning TokenPolicy defines the
// stable (context row, token) -> index mapping.
using ParamVector = std::vector<double>;

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

// splitmix64 finalizer; good avalanche, cheap, stable across platforms.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Fold a base seed with a path of indices (iteration, slot, ...).
inline std::uint64_t derive_seed(std::uint64_t base,
                                 std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = mix64(base ^ 0x5851f42d4c957f2dULL);
  for (std::uint64_t p : path) h = mix64(h ^ p);
  return h;
}

inline std::mt19937_64 make_rng(std::uint64_t base,
                                std::initializer_list<std::uint64_t> path) {
  return std::mt19937_64(derive_seed(base, path));
}

// Stream tags: keep generation / batch / eval / init draws independent.
enum SeedTag : std::uint64_t {
  kSeedGenerate = 0x67656e65ULL,   // rollout generation
  kSeedBatch = 0x62617463ULL,      // prompt batch sampling
  kSeedEvalSmall = 0x6576736dULL,  // small-policy evaluation
  kSeedEvalLarge = 0x65766c67ULL,  // large-policy evaluation
  kSeedInit = 0x696e6974ULL,       // policy init noise
  kSeedVerify = 0x76726679ULL,     // verification sampling
};

// Uniform double in [0, 1) with 53 random bits; identical on all platforms
// (std::uniform_real_distribution is implementation-defined, this is not).
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Inverse-CDF draw from an explicit probability vector.  Probabilities must
// be nonnegative and sum to ~1; the final index absorbs rounding residue.
inline int sample_categorical(std::span<const double> probs,
                              std::mt19937_64& rng) {
  if (probs.empty()) throw std::invalid_argument("sample_categorical: empty");
  const double u = uniform01(rng);
  double cum = 0.0;
  for (std::size_t i = 0; i + 1 < probs.size(); ++i) {
    cum += probs[i];
    if (u < cum) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size() - 1);
}

// ---------------------------------------------------------------------------
// Thread cap (CODISTILL_THREADS)
// ---------------------------------------------------------------------------

// Number of parallel lanes work may use.  Defaults to 1; the env var
// CODISTILL_THREADS raises the cap.  All call sites are written so results
// are identical for any lane count.
int thread_cap();

// Runs fn(i) for i in [0, n).  Lanes own disjoint index blocks; callers must
// only write to per-index slots so the result is schedule-independent.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// Shortest decimal representation that parses back to the same double
// (std::to_chars); used for CSV and report output.
std::string format_double(double value);

}  // namespace codistill
