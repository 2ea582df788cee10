#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mergepipe/catalog.hpp"
#include "mergepipe/checkpoint.hpp"
#include "mergepipe/metrics.hpp"
#include "mergepipe/op_spec.hpp"

namespace mergepipe {

struct Candidate {
  uint32_t expert_idx = 0;
  std::string tensor_id;
  uint64_t block_idx = 0;
  double score = 0.0;
  uint64_t size = 0;  // raw on-disk bytes of the block
};

struct SelectedBlock {
  uint32_t expert_idx = 0;
  std::string tensor_id;
  uint64_t block_idx = 0;
  uint64_t bytes = 0;

  friend bool operator<(const SelectedBlock& a, const SelectedBlock& b) {
    return std::tie(a.expert_idx, a.tensor_id, a.block_idx) <
           std::tie(b.expert_idx, b.tensor_id, b.block_idx);
  }
};

// First-class plan: everything the engine needs to re-execute a merge
// deterministically. The identity (plan_id) covers the logical plan only,
// not file paths, so the same plan made against relocated checkpoints keeps
// its id.
struct MergePlan {
  std::string plan_id;
  std::string base_id;
  std::string base_path;
  std::vector<std::string> expert_ids;
  std::vector<std::string> expert_paths;
  bool experts_are_deltas = false;
  OperatorSpec op;
  uint64_t budget_b = 0;
  uint64_t block_size_elements = kDefaultBlockElements;
  std::vector<std::string> order;  // base tensor traversal order
  std::vector<SelectedBlock> selected;  // sorted by (expert_idx, tensor_id, block_idx)
  uint64_t estimated_expert_cost = 0;
  bool fallback_used = false;
  uint64_t skipped_candidates = 0;

  std::string selected_blocks_digest() const;
  std::string compute_plan_id() const;
  PlanRecord record() const;
  void validate() const;

  nlohmann::json to_json() const;
  static MergePlan from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static MergePlan load(const std::filesystem::path& path);
};

// Candidate scoring over catalog sketches: s(i,b) = delta_l2 / sqrt(elements),
// sorted by descending score, ties by ascending (expert_idx, tensor_id,
// block_idx). Returns nullopt when any expected block record is missing or
// was analyzed under a different layout/base, which routes to the tensor
// fallback instead of failing.
std::optional<std::vector<Candidate>> score_candidates(
    const CheckpointHeader& base, const std::vector<std::string>& expert_ids,
    const Catalog& catalog, uint64_t block_size_elements);

// Greedy scan of a sorted candidate list: admit while cost + size <= budget,
// count the rest. Exposed for scaling tests on synthetic candidate lists.
std::vector<Candidate> greedy_select(const std::vector<Candidate>& sorted_candidates,
                                     uint64_t budget_b, uint64_t* skipped_out);

// Builds a budget-feasible plan from analyzed catalogs (block-level greedy)
// or, when block metadata are incomplete, from on-demand tensor-level delta
// norms (fallback; reads charged to META). The PlanRecord is persisted.
MergePlan plan_gen(const std::filesystem::path& base_path,
                   const std::vector<std::filesystem::path>& expert_paths,
                   const OperatorSpec& op, uint64_t budget_b, Catalog& catalog,
                   uint64_t block_size_elements, bool experts_are_deltas = false,
                   IoLedger* ledger = nullptr);

}  // namespace mergepipe
