#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"
#include "mergepipe/dtype.hpp"
#include "mergepipe/metrics.hpp"
#include "mergepipe/op_spec.hpp"

namespace mergepipe {

// ============================================================================
// Catalog records (one canonical-JSON line per record on disk)
// ============================================================================

struct Sketch {
  double l2_norm = 0.0;
  double max_abs = 0.0;
  uint64_t sign_pos_count = 0;
  // present after delta analysis against delta_base_id
  std::optional<double> delta_l2;
  std::optional<std::string> delta_base_id;

  nlohmann::json to_json() const;
  static Sketch from_json(const nlohmann::json& j);
};

struct BlockMetaRecord {
  std::string model_id;
  std::string tensor_id;
  uint64_t block_idx = 0;
  uint64_t bytes = 0;          // raw on-disk size of this block
  uint64_t shape = 0;          // element count of this block
  DType dtype = DType::kF32;
  std::string hash;            // sha256 hex of the raw block bytes
  Sketch sketch;
  uint64_t layout = 0;         // block_size_elements used at analysis time

  std::tuple<std::string, std::string, uint64_t> key() const {
    return {model_id, tensor_id, block_idx};
  }
  void validate() const;
  nlohmann::json to_json() const;
  static BlockMetaRecord from_json(const nlohmann::json& j);
};

struct TouchMapRecord {
  std::string sid;
  std::string tensor_id;
  // half-open [start, end) block index ranges, sorted, non-overlapping
  std::vector<std::array<uint64_t, 2>> touched_blocks;

  std::tuple<std::string, std::string> key() const { return {sid, tensor_id}; }
  void validate() const;
  nlohmann::json to_json() const;
  static TouchMapRecord from_json(const nlohmann::json& j);
};

struct CoverageRecord {
  std::string sid;
  std::string tensor_id;
  uint64_t block_idx = 0;
  // digest of the sorted contributing expert-id list (selection-level)
  std::string expert_set_digest;
  // true when some selected expert's delta survived the operator nonzero
  bool surviving = false;

  std::tuple<std::string, std::string, uint64_t> key() const {
    return {sid, tensor_id, block_idx};
  }
  void validate() const;
  nlohmann::json to_json() const;
  static CoverageRecord from_json(const nlohmann::json& j);
};

struct PlanRecord {
  std::string plan_id;  // canonical digest of all other fields
  std::string base_id;
  std::vector<std::string> expert_ids;
  OperatorSpec op;
  uint64_t budget_b = 0;
  std::string selected_blocks_digest;
  uint64_t estimated_expert_cost = 0;

  std::string compute_plan_id() const;
  void validate() const;
  nlohmann::json to_json() const;
  static PlanRecord from_json(const nlohmann::json& j);
};

struct BlockMapEntry {
  std::string tensor_id;
  uint64_t block_idx = 0;
  uint64_t offset_bytes = 0;  // relative to the output data region
  uint64_t length_bytes = 0;
  std::string hash;  // sha256 hex of the encoded output block

  nlohmann::json to_json() const;
  static BlockMapEntry from_json(const nlohmann::json& j);
};

struct ManifestRecord {
  std::string sid;
  std::string plan_id;
  std::string base_id;
  std::vector<std::string> expert_ids;
  OperatorSpec op;
  uint64_t budget_b = 0;
  uint64_t realized_expert_cost = 0;
  std::string output_root;  // constant relative root, "snapshots"
  std::string created_at;   // first-commit wall time, ISO-8601 UTC
  std::vector<BlockMapEntry> block_map;

  // Digest of the manifest with sid and created_at blanked. created_at is
  // wall time and must not perturb the identity of a deterministic merge.
  std::string compute_sid() const;
  // Identity comparison for the idempotent-commit path.
  bool same_content_ignoring_created_at(const ManifestRecord& o) const;
  void validate() const;
  nlohmann::json to_json() const;
  static ManifestRecord from_json(const nlohmann::json& j);
};

// ============================================================================
// Catalog store
//
// Layout: <dir>/{blockmeta,touchmap,coverage,plan,manifest}.jsonl + LOCK.
// Append-only logs, replayed on open; last write wins per key, except
// manifests which are create-only. Single writer (advisory flock on LOCK),
// any number of readers.
// ============================================================================

class Catalog {
 public:
  enum class Mode { kReadWrite, kReadOnly };

  explicit Catalog(const std::filesystem::path& dir, Mode mode = Mode::kReadWrite,
                   IoLedger* ledger = nullptr);
  ~Catalog();
  Catalog(const Catalog&) = delete;
  Catalog& operator=(const Catalog&) = delete;

  const std::filesystem::path& dir() const { return dir_; }

  // Idempotent puts: identical content is a no-op (returns false), new or
  // changed content appends (returns true). Records are validated first.
  bool put(const BlockMetaRecord& rec);
  bool put(const TouchMapRecord& rec);
  bool put(const CoverageRecord& rec);
  bool put(const PlanRecord& rec);

  // Create-only. Re-putting the stored content (created_at may differ) is a
  // no-op returning the stored record; different content for an existing sid
  // throws ImmutabilityViolation.
  ManifestRecord put_manifest(const ManifestRecord& rec);

  std::optional<BlockMetaRecord> get_block_meta(const std::string& model_id,
                                                const std::string& tensor_id,
                                                uint64_t block_idx) const;
  // All records for a model (optionally one tensor), in key order.
  std::vector<BlockMetaRecord> block_meta_range(const std::string& model_id) const;
  std::vector<BlockMetaRecord> block_meta_range(const std::string& model_id,
                                                const std::string& tensor_id) const;

  std::optional<TouchMapRecord> get_touch_map(const std::string& sid,
                                              const std::string& tensor_id) const;
  std::vector<TouchMapRecord> touch_map_range(const std::string& sid) const;

  std::optional<CoverageRecord> get_coverage(const std::string& sid,
                                             const std::string& tensor_id,
                                             uint64_t block_idx) const;
  std::vector<CoverageRecord> coverage_range(const std::string& sid) const;

  std::optional<PlanRecord> get_plan(const std::string& plan_id) const;
  std::optional<ManifestRecord> get_manifest(const std::string& sid) const;
  std::optional<ManifestRecord> manifest_by_plan(const std::string& plan_id) const;
  std::vector<ManifestRecord> manifests() const;

  // fsyncs every log file that received appends since the last flush.
  void flush();

  // Total bytes appended by this handle (catalog write overhead).
  uint64_t bytes_appended() const { return bytes_appended_; }

 private:
  enum Kind { kBlockMeta = 0, kTouchMap, kCoverage, kPlan, kManifest, kKindCount };
  static const char* kind_file(int kind);

  void replay();
  void append_record(int kind, const std::string& line);

  std::filesystem::path dir_;
  Mode mode_;
  IoLedger* ledger_ = nullptr;
  int lock_fd_ = -1;
  int append_fd_[kKindCount] = {-1, -1, -1, -1, -1};
  bool dirty_[kKindCount] = {};
  uint64_t bytes_appended_ = 0;

  std::map<std::tuple<std::string, std::string, uint64_t>, BlockMetaRecord> blockmeta_;
  std::map<std::tuple<std::string, std::string>, TouchMapRecord> touchmap_;
  std::map<std::tuple<std::string, std::string, uint64_t>, CoverageRecord> coverage_;
  std::map<std::string, PlanRecord> plans_;
  std::map<std::string, ManifestRecord> manifests_;
  std::map<std::string, std::string> sid_by_plan_;
};

// Digest of a sorted expert-id list, as stored in CoverageRecord.
std::string expert_set_digest(std::vector<std::string> expert_ids);

}  // namespace mergepipe
