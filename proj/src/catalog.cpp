#include "mergepipe/catalog.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mergepipe/canonical.hpp"
#include "mergepipe/errors.hpp"
#include "mergepipe/sha256.hpp"

namespace mergepipe {

namespace {

bool is_hex64(const std::string& s) {
  if (s.size() != 64) return false;
  for (char c : s) {
    if (!((c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'))) return false;
  }
  return true;
}

const nlohmann::json& req(const nlohmann::json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw CorruptData(std::string("missing field '") + key + "'");
  return *it;
}

std::string req_str(const nlohmann::json& j, const char* key) {
  const auto& v = req(j, key);
  if (!v.is_string()) throw CorruptData(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

uint64_t req_u64(const nlohmann::json& j, const char* key) {
  const auto& v = req(j, key);
  if (!v.is_number_unsigned())
    throw CorruptData(std::string("field '") + key + "' must be a non-negative integer");
  return v.get<uint64_t>();
}

double req_f64(const nlohmann::json& j, const char* key) {
  const auto& v = req(j, key);
  if (!v.is_number()) throw CorruptData(std::string("field '") + key + "' must be a number");
  return v.get<double>();
}

bool req_bool(const nlohmann::json& j, const char* key) {
  const auto& v = req(j, key);
  if (!v.is_boolean()) throw CorruptData(std::string("field '") + key + "' must be a boolean");
  return v.get<bool>();
}

std::vector<std::string> req_str_array(const nlohmann::json& j, const char* key) {
  const auto& v = req(j, key);
  if (!v.is_array()) throw CorruptData(std::string("field '") + key + "' must be an array");
  std::vector<std::string> out;
  out.reserve(v.size());
  for (const auto& e : v) {
    if (!e.is_string()) throw CorruptData(std::string("field '") + key + "' must hold strings");
    out.push_back(e.get<std::string>());
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Sketch
// ---------------------------------------------------------------------------

nlohmann::json Sketch::to_json() const {
  nlohmann::json j{
      {"l2_norm", l2_norm}, {"max_abs", max_abs}, {"sign_pos_count", sign_pos_count}};
  if (delta_l2.has_value()) j["delta_l2"] = *delta_l2;
  if (delta_base_id.has_value()) j["delta_base_id"] = *delta_base_id;
  return j;
}

Sketch Sketch::from_json(const nlohmann::json& j) {
  Sketch s;
  s.l2_norm = req_f64(j, "l2_norm");
  s.max_abs = req_f64(j, "max_abs");
  s.sign_pos_count = req_u64(j, "sign_pos_count");
  if (j.contains("delta_l2")) s.delta_l2 = req_f64(j, "delta_l2");
  if (j.contains("delta_base_id")) s.delta_base_id = req_str(j, "delta_base_id");
  return s;
}

// ---------------------------------------------------------------------------
// BlockMetaRecord
// ---------------------------------------------------------------------------

void BlockMetaRecord::validate() const {
  if (model_id.empty() || tensor_id.empty()) throw CorruptData("block meta: empty id");
  if (shape == 0) throw CorruptData("block meta: empty block");
  if (bytes != shape * dtype_size(dtype)) throw CorruptData("block meta: bytes/shape mismatch");
  if (layout == 0) throw CorruptData("block meta: zero block layout");
  if (!is_hex64(hash)) throw CorruptData("block meta: bad hash");
  if (!std::isfinite(sketch.l2_norm) || sketch.l2_norm < 0.0)
    throw CorruptData("block meta: bad l2_norm");
  if (!std::isfinite(sketch.max_abs) || sketch.max_abs < 0.0)
    throw CorruptData("block meta: bad max_abs");
  // ||v||_2 <= max|v| * sqrt(n), with room for summation rounding
  double bound = sketch.max_abs * std::sqrt(static_cast<double>(shape));
  if (sketch.l2_norm > bound * (1.0 + 1e-9) + 1e-12)
    throw CorruptData("block meta: l2_norm exceeds max_abs bound");
  if (sketch.sign_pos_count > shape) throw CorruptData("block meta: sign_pos_count > elements");
  if (sketch.delta_l2.has_value() != sketch.delta_base_id.has_value())
    throw CorruptData("block meta: delta fields must come in pairs");
  if (sketch.delta_l2.has_value()) {
    if (!std::isfinite(*sketch.delta_l2) || *sketch.delta_l2 < 0.0)
      throw CorruptData("block meta: bad delta_l2");
    if (sketch.delta_base_id->empty()) throw CorruptData("block meta: empty delta_base_id");
  }
}

nlohmann::json BlockMetaRecord::to_json() const {
  return nlohmann::json{{"model_id", model_id}, {"tensor_id", tensor_id},
                        {"block_idx", block_idx}, {"bytes", bytes},
                        {"shape", shape},         {"dtype", to_string(dtype)},
                        {"hash", hash},           {"sketch", sketch.to_json()},
                        {"layout", layout}};
}

BlockMetaRecord BlockMetaRecord::from_json(const nlohmann::json& j) {
  BlockMetaRecord r;
  r.model_id = req_str(j, "model_id");
  r.tensor_id = req_str(j, "tensor_id");
  r.block_idx = req_u64(j, "block_idx");
  r.bytes = req_u64(j, "bytes");
  r.shape = req_u64(j, "shape");
  r.dtype = dtype_from_string(req_str(j, "dtype"));
  r.hash = req_str(j, "hash");
  r.sketch = Sketch::from_json(req(j, "sketch"));
  r.layout = req_u64(j, "layout");
  return r;
}

// ---------------------------------------------------------------------------
// TouchMapRecord
// ---------------------------------------------------------------------------

void TouchMapRecord::validate() const {
  if (!is_hex64(sid)) throw CorruptData("touch map: bad sid");
  if (tensor_id.empty()) throw CorruptData("touch map: empty tensor_id");
  uint64_t prev_end = 0;
  bool first = true;
  for (const auto& r : touched_blocks) {
    if (r[0] >= r[1]) throw CorruptData("touch map: empty range");
    if (!first && r[0] <= prev_end)
      throw CorruptData("touch map: ranges must be sorted, disjoint, and coalesced");
    prev_end = r[1];
    first = false;
  }
}

nlohmann::json TouchMapRecord::to_json() const {
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : touched_blocks) rs.push_back({r[0], r[1]});
  return nlohmann::json{{"sid", sid}, {"tensor_id", tensor_id}, {"touched_blocks", rs}};
}

TouchMapRecord TouchMapRecord::from_json(const nlohmann::json& j) {
  TouchMapRecord r;
  r.sid = req_str(j, "sid");
  r.tensor_id = req_str(j, "tensor_id");
  const auto& rs = req(j, "touched_blocks");
  if (!rs.is_array()) throw CorruptData("touch map: touched_blocks must be an array");
  for (const auto& e : rs) {
    if (!e.is_array() || e.size() != 2 || !e[0].is_number_unsigned() ||
        !e[1].is_number_unsigned())
      throw CorruptData("touch map: range must be [start, end]");
    r.touched_blocks.push_back({e[0].get<uint64_t>(), e[1].get<uint64_t>()});
  }
  return r;
}

// ---------------------------------------------------------------------------
// CoverageRecord
// ---------------------------------------------------------------------------

void CoverageRecord::validate() const {
  if (!is_hex64(sid)) throw CorruptData("coverage: bad sid");
  if (tensor_id.empty()) throw CorruptData("coverage: empty tensor_id");
  if (!is_hex64(expert_set_digest)) throw CorruptData("coverage: bad expert_set_digest");
}

nlohmann::json CoverageRecord::to_json() const {
  return nlohmann::json{{"sid", sid},
                        {"tensor_id", tensor_id},
                        {"block_idx", block_idx},
                        {"expert_set_digest", expert_set_digest},
                        {"surviving", surviving}};
}

CoverageRecord CoverageRecord::from_json(const nlohmann::json& j) {
  CoverageRecord r;
  r.sid = req_str(j, "sid");
  r.tensor_id = req_str(j, "tensor_id");
  r.block_idx = req_u64(j, "block_idx");
  r.expert_set_digest = req_str(j, "expert_set_digest");
  r.surviving = req_bool(j, "surviving");
  return r;
}

// ---------------------------------------------------------------------------
// PlanRecord
// ---------------------------------------------------------------------------

std::string PlanRecord::compute_plan_id() const {
  nlohmann::json j{{"base_id", base_id},
                   {"budget_B", budget_b},
                   {"estimated_expert_cost", estimated_expert_cost},
                   {"expert_ids", expert_ids},
                   {"op", op.to_json()},
                   {"selected_blocks_digest", selected_blocks_digest}};
  return canonical_digest(j);
}

void PlanRecord::validate() const {
  if (base_id.empty()) throw CorruptData("plan: empty base_id");
  if (expert_ids.empty()) throw CorruptData("plan: no experts");
  if (!is_hex64(selected_blocks_digest)) throw CorruptData("plan: bad selected_blocks_digest");
  op.validate();
  if (plan_id != compute_plan_id()) throw CorruptData("plan: plan_id does not match content");
}

nlohmann::json PlanRecord::to_json() const {
  return nlohmann::json{{"plan_id", plan_id},
                        {"base_id", base_id},
                        {"expert_ids", expert_ids},
                        {"op", op.to_json()},
                        {"budget_B", budget_b},
                        {"selected_blocks_digest", selected_blocks_digest},
                        {"estimated_expert_cost", estimated_expert_cost}};
}

PlanRecord PlanRecord::from_json(const nlohmann::json& j) {
  PlanRecord r;
  r.plan_id = req_str(j, "plan_id");
  r.base_id = req_str(j, "base_id");
  r.expert_ids = req_str_array(j, "expert_ids");
  r.op = OperatorSpec::from_json(req(j, "op"));
  r.budget_b = req_u64(j, "budget_B");
  r.selected_blocks_digest = req_str(j, "selected_blocks_digest");
  r.estimated_expert_cost = req_u64(j, "estimated_expert_cost");
  return r;
}

// ---------------------------------------------------------------------------
// ManifestRecord
// ---------------------------------------------------------------------------

nlohmann::json BlockMapEntry::to_json() const {
  return nlohmann::json{{"tensor_id", tensor_id},
                        {"block_idx", block_idx},
                        {"offset_bytes", offset_bytes},
                        {"length_bytes", length_bytes},
                        {"hash", hash}};
}

BlockMapEntry BlockMapEntry::from_json(const nlohmann::json& j) {
  BlockMapEntry e;
  e.tensor_id = req_str(j, "tensor_id");
  e.block_idx = req_u64(j, "block_idx");
  e.offset_bytes = req_u64(j, "offset_bytes");
  e.length_bytes = req_u64(j, "length_bytes");
  e.hash = req_str(j, "hash");
  return e;
}

std::string ManifestRecord::compute_sid() const {
  nlohmann::json j = to_json();
  j["sid"] = "";
  j["created_at"] = "";
  return canonical_digest(j);
}

bool ManifestRecord::same_content_ignoring_created_at(const ManifestRecord& o) const {
  nlohmann::json a = to_json();
  nlohmann::json b = o.to_json();
  a["created_at"] = "";
  b["created_at"] = "";
  return canonical_json(a) == canonical_json(b);
}

void ManifestRecord::validate() const {
  if (!is_hex64(sid)) throw CorruptData("manifest: bad sid");
  if (sid != compute_sid()) throw CorruptData("manifest: sid does not match content");
  if (!is_hex64(plan_id)) throw CorruptData("manifest: bad plan_id");
  if (base_id.empty()) throw CorruptData("manifest: empty base_id");
  if (expert_ids.empty()) throw CorruptData("manifest: no experts");
  op.validate();
  if (realized_expert_cost > budget_b) throw CorruptData("manifest: realized cost over budget");
  if (output_root.empty()) throw CorruptData("manifest: empty output_root");
  if (created_at.empty()) throw CorruptData("manifest: empty created_at");
  if (block_map.empty()) throw CorruptData("manifest: empty block_map");
  uint64_t expect_offset = 0;
  for (const auto& e : block_map) {
    if (e.tensor_id.empty()) throw CorruptData("manifest: block entry without tensor_id");
    if (e.length_bytes == 0) throw CorruptData("manifest: empty block entry");
    if (e.offset_bytes != expect_offset)
      throw CorruptData("manifest: block_map must tile the data region");
    if (!is_hex64(e.hash)) throw CorruptData("manifest: bad block hash");
    expect_offset = e.offset_bytes + e.length_bytes;
  }
}

nlohmann::json ManifestRecord::to_json() const {
  nlohmann::json bm = nlohmann::json::array();
  for (const auto& e : block_map) bm.push_back(e.to_json());
  return nlohmann::json{{"sid", sid},
                        {"plan_id", plan_id},
                        {"base_id", base_id},
                        {"expert_ids", expert_ids},
                        {"op", op.to_json()},
                        {"budget_B", budget_b},
                        {"realized_expert_cost", realized_expert_cost},
                        {"output_root", output_root},
                        {"created_at", created_at},
                        {"block_map", bm}};
}

ManifestRecord ManifestRecord::from_json(const nlohmann::json& j) {
  ManifestRecord r;
  r.sid = req_str(j, "sid");
  r.plan_id = req_str(j, "plan_id");
  r.base_id = req_str(j, "base_id");
  r.expert_ids = req_str_array(j, "expert_ids");
  r.op = OperatorSpec::from_json(req(j, "op"));
  r.budget_b = req_u64(j, "budget_B");
  r.realized_expert_cost = req_u64(j, "realized_expert_cost");
  r.output_root = req_str(j, "output_root");
  r.created_at = req_str(j, "created_at");
  const auto& bm = req(j, "block_map");
  if (!bm.is_array()) throw CorruptData("manifest: block_map must be an array");
  for (const auto& e : bm) r.block_map.push_back(BlockMapEntry::from_json(e));
  return r;
}

// ---------------------------------------------------------------------------
// Catalog
// ---------------------------------------------------------------------------

const char* Catalog::kind_file(int kind) {
  switch (kind) {
    case kBlockMeta: return "blockmeta.jsonl";
    case kTouchMap: return "touchmap.jsonl";
    case kCoverage: return "coverage.jsonl";
    case kPlan: return "plan.jsonl";
    case kManifest: return "manifest.jsonl";
  }
  throw InvalidArgument("bad catalog kind");
}

Catalog::Catalog(const std::filesystem::path& dir, Mode mode, IoLedger* ledger)
    : dir_(dir), mode_(mode), ledger_(ledger) {
  std::error_code ec;
  if (mode_ == Mode::kReadWrite) {
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create catalog dir " + dir_.string() + ": " + ec.message());
    std::filesystem::path lock_path = dir_ / "LOCK";
    lock_fd_ = ::open(lock_path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
    if (lock_fd_ < 0)
      throw IoError("cannot open " + lock_path.string() + ": " + std::strerror(errno));
    if (::flock(lock_fd_, LOCK_EX | LOCK_NB) != 0) {
      int err = errno;
      ::close(lock_fd_);
      lock_fd_ = -1;
      if (err == EWOULDBLOCK)
        throw IoError("catalog " + dir_.string() + " is locked by another writer");
      throw IoError("cannot lock catalog " + dir_.string() + ": " + std::strerror(err));
    }
  } else if (!std::filesystem::is_directory(dir_, ec)) {
    throw IoError("catalog dir " + dir_.string() + " does not exist");
  }
  try {
    replay();
  } catch (...) {
    // the destructor will not run; do not leak the writer lock
    if (lock_fd_ >= 0) ::close(lock_fd_);
    throw;
  }
}

Catalog::~Catalog() {
  for (int k = 0; k < kKindCount; ++k) {
    if (append_fd_[k] >= 0) ::close(append_fd_[k]);
  }
  if (lock_fd_ >= 0) ::close(lock_fd_);  // releases the flock
}

void Catalog::replay() {
  for (int kind = 0; kind < kKindCount; ++kind) {
    std::filesystem::path path = dir_ / kind_file(kind);
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) continue;
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot read " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    std::string text = buf.str();
    if (ledger_) ledger_->charge(IoCat::kMetaIo, text.size());

    size_t pos = 0;
    size_t line_no = 0;
    while (pos < text.size()) {
      size_t nl = text.find('\n', pos);
      if (nl == std::string::npos) break;  // torn final line: crash remnant, ignore
      ++line_no;
      std::string line = text.substr(pos, nl - pos);
      pos = nl + 1;
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded())
        throw CorruptData(path.string() + ":" + std::to_string(line_no) + ": unparseable record");
      try {
        switch (kind) {
          case kBlockMeta: {
            BlockMetaRecord r = BlockMetaRecord::from_json(j);
            r.validate();
            blockmeta_[r.key()] = std::move(r);
            break;
          }
          case kTouchMap: {
            TouchMapRecord r = TouchMapRecord::from_json(j);
            r.validate();
            touchmap_[r.key()] = std::move(r);
            break;
          }
          case kCoverage: {
            CoverageRecord r = CoverageRecord::from_json(j);
            r.validate();
            coverage_[r.key()] = std::move(r);
            break;
          }
          case kPlan: {
            PlanRecord r = PlanRecord::from_json(j);
            r.validate();
            plans_[r.plan_id] = std::move(r);
            break;
          }
          case kManifest: {
            ManifestRecord r = ManifestRecord::from_json(j);
            r.validate();
            auto it = manifests_.find(r.sid);
            if (it != manifests_.end()) {
              if (canonical_json(it->second.to_json()) != canonical_json(r.to_json()))
                throw CorruptData("conflicting manifests for sid " + r.sid);
              break;  // exact duplicate append, e.g. from crash healing
            }
            sid_by_plan_.emplace(r.plan_id, r.sid);
            manifests_[r.sid] = std::move(r);
            break;
          }
        }
      } catch (const CorruptData&) {
        throw;
      } catch (const std::exception& e) {
        throw CorruptData(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
  }
}

void Catalog::append_record(int kind, const std::string& line) {
  if (mode_ != Mode::kReadWrite) throw IoError("catalog opened read-only");
  if (append_fd_[kind] < 0) {
    std::filesystem::path path = dir_ / kind_file(kind);
    append_fd_[kind] = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT | O_CLOEXEC, 0644);
    if (append_fd_[kind] < 0)
      throw IoError("cannot append to " + path.string() + ": " + std::strerror(errno));
  }
  std::string out = line;
  out.push_back('\n');
  size_t done = 0;
  while (done < out.size()) {
    ssize_t n = ::write(append_fd_[kind], out.data() + done, out.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw IoError(std::string("catalog append failed: ") + std::strerror(errno));
    }
    done += static_cast<size_t>(n);
  }
  dirty_[kind] = true;
  bytes_appended_ += out.size();
  if (ledger_) ledger_->charge(IoCat::kMetaIo, out.size());
}

bool Catalog::put(const BlockMetaRecord& rec) {
  rec.validate();
  std::string line = canonical_json(rec.to_json());
  auto it = blockmeta_.find(rec.key());
  if (it != blockmeta_.end() && canonical_json(it->second.to_json()) == line) return false;
  append_record(kBlockMeta, line);
  blockmeta_[rec.key()] = rec;
  return true;
}

bool Catalog::put(const TouchMapRecord& rec) {
  rec.validate();
  std::string line = canonical_json(rec.to_json());
  auto it = touchmap_.find(rec.key());
  if (it != touchmap_.end() && canonical_json(it->second.to_json()) == line) return false;
  append_record(kTouchMap, line);
  touchmap_[rec.key()] = rec;
  return true;
}

bool Catalog::put(const CoverageRecord& rec) {
  rec.validate();
  std::string line = canonical_json(rec.to_json());
  auto it = coverage_.find(rec.key());
  if (it != coverage_.end() && canonical_json(it->second.to_json()) == line) return false;
  append_record(kCoverage, line);
  coverage_[rec.key()] = rec;
  return true;
}

bool Catalog::put(const PlanRecord& rec) {
  rec.validate();
  std::string line = canonical_json(rec.to_json());
  auto it = plans_.find(rec.plan_id);
  if (it != plans_.end() && canonical_json(it->second.to_json()) == line) return false;
  append_record(kPlan, line);
  plans_[rec.plan_id] = rec;
  return true;
}

ManifestRecord Catalog::put_manifest(const ManifestRecord& rec) {
  rec.validate();
  auto it = manifests_.find(rec.sid);
  if (it != manifests_.end()) {
    if (!rec.same_content_ignoring_created_at(it->second))
      throw ImmutabilityViolation("manifest " + rec.sid + " already exists with different content");
    return it->second;  // idempotent re-commit, stored record stands
  }
  append_record(kManifest, canonical_json(rec.to_json()));
  manifests_[rec.sid] = rec;
  sid_by_plan_.emplace(rec.plan_id, rec.sid);
  return rec;
}

std::optional<BlockMetaRecord> Catalog::get_block_meta(const std::string& model_id,
                                                       const std::string& tensor_id,
                                                       uint64_t block_idx) const {
  auto it = blockmeta_.find({model_id, tensor_id, block_idx});
  if (it == blockmeta_.end()) return std::nullopt;
  return it->second;
}

std::vector<BlockMetaRecord> Catalog::block_meta_range(const std::string& model_id) const {
  std::vector<BlockMetaRecord> out;
  for (auto it = blockmeta_.lower_bound({model_id, "", 0});
       it != blockmeta_.end() && std::get<0>(it->first) == model_id; ++it)
    out.push_back(it->second);
  return out;
}

std::vector<BlockMetaRecord> Catalog::block_meta_range(const std::string& model_id,
                                                       const std::string& tensor_id) const {
  std::vector<BlockMetaRecord> out;
  for (auto it = blockmeta_.lower_bound({model_id, tensor_id, 0});
       it != blockmeta_.end() && std::get<0>(it->first) == model_id &&
       std::get<1>(it->first) == tensor_id;
       ++it)
    out.push_back(it->second);
  return out;
}

std::optional<TouchMapRecord> Catalog::get_touch_map(const std::string& sid,
                                                     const std::string& tensor_id) const {
  auto it = touchmap_.find({sid, tensor_id});
  if (it == touchmap_.end()) return std::nullopt;
  return it->second;
}

std::vector<TouchMapRecord> Catalog::touch_map_range(const std::string& sid) const {
  std::vector<TouchMapRecord> out;
  for (auto it = touchmap_.lower_bound({sid, ""});
       it != touchmap_.end() && std::get<0>(it->first) == sid; ++it)
    out.push_back(it->second);
  return out;
}

std::optional<CoverageRecord> Catalog::get_coverage(const std::string& sid,
                                                    const std::string& tensor_id,
                                                    uint64_t block_idx) const {
  auto it = coverage_.find({sid, tensor_id, block_idx});
  if (it == coverage_.end()) return std::nullopt;
  return it->second;
}

std::vector<CoverageRecord> Catalog::coverage_range(const std::string& sid) const {
  std::vector<CoverageRecord> out;
  for (auto it = coverage_.lower_bound({sid, "", 0});
       it != coverage_.end() && std::get<0>(it->first) == sid; ++it)
    out.push_back(it->second);
  return out;
}

std::optional<PlanRecord> Catalog::get_plan(const std::string& plan_id) const {
  auto it = plans_.find(plan_id);
  if (it == plans_.end()) return std::nullopt;
  return it->second;
}

std::optional<ManifestRecord> Catalog::get_manifest(const std::string& sid) const {
  auto it = manifests_.find(sid);
  if (it == manifests_.end()) return std::nullopt;
  return it->second;
}

std::optional<ManifestRecord> Catalog::manifest_by_plan(const std::string& plan_id) const {
  auto it = sid_by_plan_.find(plan_id);
  if (it == sid_by_plan_.end()) return std::nullopt;
  return get_manifest(it->second);
}

std::vector<ManifestRecord> Catalog::manifests() const {
  std::vector<ManifestRecord> out;
  out.reserve(manifests_.size());
  for (const auto& [sid, rec] : manifests_) out.push_back(rec);
  return out;
}

void Catalog::flush() {
  for (int k = 0; k < kKindCount; ++k) {
    if (dirty_[k] && append_fd_[k] >= 0) {
      if (::fsync(append_fd_[k]) != 0)
        throw IoError(std::string("fsync failed: ") + std::strerror(errno));
      dirty_[k] = false;
    }
  }
}

std::string expert_set_digest(std::vector<std::string> expert_ids) {
  std::sort(expert_ids.begin(), expert_ids.end());
  return canonical_digest(nlohmann::json(expert_ids));
}

}  // namespace mergepipe
