#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "mergepipe/catalog.hpp"
#include "mergepipe/metrics.hpp"
#include "mergepipe/planner.hpp"

namespace mergepipe {

// Store layout rooted next to the catalog directory:
//   <root>/catalog/*.jsonl              records
//   <root>/staging/*                    invisible work in progress
//   <root>/snapshots/<sid>/model.mpck   committed payloads
//   <root>/snapshots/<sid>.manifest.json  commit records; their presence
//                                         defines snapshot visibility
struct StorePaths {
  std::filesystem::path catalog_dir;
  std::filesystem::path staging_dir;
  std::filesystem::path snapshots_dir;

  static StorePaths from_catalog_dir(const std::filesystem::path& catalog_dir);

  std::filesystem::path snapshot_data(const std::string& sid) const {
    return snapshots_dir / sid / "model.mpck";
  }
  std::filesystem::path snapshot_manifest(const std::string& sid) const {
    return snapshots_dir / (sid + ".manifest.json");
  }
};

struct ExecuteOptions {
  // Re-use an existing snapshot for this plan_id instead of re-executing.
  // Off by default: a plain re-run honestly re-reads and re-merges, then
  // deduplicates at publish time via content addressing.
  bool reuse = false;
  unsigned threads = 1;
};

struct MergeResult {
  std::string sid;
  ManifestRecord manifest;
  uint64_t realized_expert_cost = 0;
  bool reused = false;
};

// Streaming execution: one pass over the base in header order, pulling only
// selected expert blocks, staging output blocks, validating staged hashes,
// then publishing atomically (manifest-file rename is the commit point).
MergeResult execute_merge(const MergePlan& plan, const StorePaths& store, Catalog& catalog,
                          IoLedger& ledger, const ExecuteOptions& opts = {});

// Baseline: reads every expert in full, merges with everything selected, and
// publishes through the same atomic path. Persists the implicit full plan so
// the manifest has a plan_id to bind to.
MergeResult naive_merge(const std::filesystem::path& base_path,
                        const std::vector<std::filesystem::path>& expert_paths,
                        const OperatorSpec& op, const StorePaths& store, Catalog& catalog,
                        IoLedger& ledger,
                        uint64_t block_size_elements = kDefaultBlockElements,
                        bool experts_are_deltas = false, unsigned threads = 1);

struct VerifyReport {
  std::string sid;
  bool ok = false;
  uint64_t blocks_checked = 0;
  std::vector<std::string> failures;

  nlohmann::json to_json() const;
};

// Recomputes the content digest of the published manifest, re-hashes every
// output block against the block map, and re-checks the budget bound.
VerifyReport verify_snapshot(const StorePaths& store, const std::string& sid,
                             IoLedger* ledger = nullptr);

// Sids of fully committed snapshots (manifest file present), sorted.
std::vector<std::string> list_snapshots(const StorePaths& store);

struct DiffReport {
  std::string sid_a;
  std::string sid_b;
  double rel_l2 = 0.0;            // ||a - b|| / ||b||
  double p95_block_rel = 0.0;     // nearest-rank P95 of per-block ||a-b||/||b||
  uint64_t blocks = 0;
  std::optional<double> touched_fraction_a;
  std::optional<double> touched_fraction_b;
  std::optional<double> surviving_fraction_a;
  std::optional<double> surviving_fraction_b;

  nlohmann::json to_json() const;
};

DiffReport snapshot_diff(const StorePaths& store, const Catalog& catalog,
                         const std::string& sid_a, const std::string& sid_b,
                         uint64_t block_size_elements = kDefaultBlockElements);

// Test-build fault injection: crash_point() is called between commit-pipeline
// steps; MERGEPIPE_CRASH_AT_STEP=<n> hard-exits the process at the n-th point
// (1-based). An in-process hook sees every point first and may throw to
// exercise the abort path.
void set_crash_hook(std::function<void(const char*)> hook);
namespace internal {
void crash_point(const char* name);
}

}  // namespace mergepipe
