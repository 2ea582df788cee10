#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mergepipe/op_spec.hpp"

namespace mergepipe {

// One output block's worth of merge inputs: the base values plus the deltas
// of exactly the experts whose plan selected this block, ascending by
// expert_idx. Absent experts contribute implicitly zero. Kernels are pure
// functions of this struct plus operator parameters; nothing crosses blocks.
struct DeltaBatch {
  std::string tensor_id;
  uint64_t tensor_digest;       // tensor_digest64(tensor_id), precomputed per tensor
  uint64_t block_start_element; // global element index of base[0] within the tensor
  std::span<const float> base;

  struct ExpertDelta {
    uint32_t expert_idx;
    std::span<const float> delta;
  };
  std::vector<ExpertDelta> deltas;
};

// Keyed counter RNG for DARE: a splitmix64 finalizer chained over the inputs.
// Counter-style keying makes draws independent of execution order, worker
// count, and platform.
inline uint64_t mix64(uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline uint64_t hash64(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
  uint64_t h = mix64(seed);
  h = mix64(h ^ a);
  h = mix64(h ^ b);
  h = mix64(h ^ c);
  return h;
}

// Top 53 bits to [0, 1).
inline double uniform01(uint64_t h) { return static_cast<double>(h >> 11) * 0x1.0p-53; }

// First 8 bytes (little-endian) of SHA-256 of the tensor name.
uint64_t tensor_digest64(const std::string& tensor_id);

// out[j] = base[j] + (lambda / k_total) * sum_i delta_i[j].
// k_total is the plan's expert count, not the batch's.
void apply_avg(const DeltaBatch& batch, double lambda, uint32_t k_total,
               std::vector<float>& out);

// Trim-elect-merge, per block: keep each expert's ceil(density*n) largest
// magnitudes (ties keep the lower index), elect the sign of the elementwise
// sum (zero elects positive), average the kept values that strictly match
// the elected sign.
void apply_ties(const DeltaBatch& batch, double lambda, double density,
                std::vector<float>& out);

// Drop each delta element with probability drop_p (keyed on seed, expert,
// tensor, global element index), rescale survivors by 1/(1-drop_p), combine
// as task arithmetic.
void apply_dare(const DeltaBatch& batch, double lambda, double drop_p, uint64_t seed,
                std::vector<float>& out);

void apply_operator(const DeltaBatch& batch, const OperatorSpec& op, uint32_t k_total,
                    std::vector<float>& out);

}  // namespace mergepipe
