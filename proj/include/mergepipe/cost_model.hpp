#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "mergepipe/catalog.hpp"
#include "mergepipe/checkpoint.hpp"
#include "mergepipe/planner.hpp"

namespace mergepipe {

// C_merge = C_base + C_expert + C_out + C_meta. Base and output terms are
// fixed by the base checkpoint; only the expert term is budget-controlled.
struct CostBreakdown {
  uint64_t c_base = 0;
  uint64_t c_expert = 0;
  uint64_t c_out = 0;
  uint64_t c_meta = 0;

  uint64_t total() const { return c_base + c_expert + c_out + c_meta; }
  nlohmann::json to_json() const;
};

// Full-scan expert bytes: the naive baseline reads every expert tensor.
uint64_t naive_expert_cost(const std::vector<CheckpointHeader>& experts);

// Sum of on-disk bytes over the plan's selected blocks, resolved through the
// catalog. Throws CorruptData when a selected block has no BlockMetaRecord.
uint64_t planned_expert_cost(const MergePlan& plan, const Catalog& catalog);

// Metadata I/O is bounded and small; estimate as 1% of the base payload plus
// a 64 KiB floor. Reported, never optimized against.
uint64_t default_meta_estimate(uint64_t c_base);

CostBreakdown estimate_total(const MergePlan& plan, const CheckpointHeader& base,
                             uint64_t meta_estimate);

inline bool is_feasible(uint64_t expert_cost, uint64_t budget_b) {
  return expert_cost <= budget_b;
}

// Budget syntax: decimals in (0, 1] are a fraction of the naive expert cost
// ("0.3"); plain integers are bytes; integers may carry a B/KiB/MiB/GiB
// suffix ("512MiB").
uint64_t parse_budget(const std::string& text, uint64_t naive_cost);

}  // namespace mergepipe
