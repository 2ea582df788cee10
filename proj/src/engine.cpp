#include "mergepipe/engine.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "mergepipe/canonical.hpp"
#include "mergepipe/cost_model.hpp"
#include "mergepipe/errors.hpp"
#include "mergepipe/operators.hpp"
#include "mergepipe/sha256.hpp"

namespace mergepipe {

// ---------------------------------------------------------------------------
// Fault injection
// ---------------------------------------------------------------------------

namespace {

std::function<void(const char*)> g_crash_hook;

#ifdef MERGEPIPE_CRASH_HOOK
std::atomic<int64_t> g_crash_hits{0};

int64_t crash_target() {
  static int64_t target = [] {
    const char* env = std::getenv("MERGEPIPE_CRASH_AT_STEP");
    if (!env || !*env) return int64_t{-1};
    return static_cast<int64_t>(std::strtoll(env, nullptr, 10));
  }();
  return target;
}
#endif

}  // namespace

void set_crash_hook(std::function<void(const char*)> hook) { g_crash_hook = std::move(hook); }

void internal::crash_point(const char* name) {
#ifdef MERGEPIPE_CRASH_HOOK
  if (g_crash_hook) g_crash_hook(name);
  if (crash_target() >= 0) {
    int64_t hit = g_crash_hits.fetch_add(1, std::memory_order_relaxed) + 1;
    if (hit == crash_target()) {
      // a hard crash: no destructors, no buffers flushed
      ::_exit(42);
    }
  }
#else
  (void)name;
#endif
}

// ---------------------------------------------------------------------------
// Store plumbing
// ---------------------------------------------------------------------------

StorePaths StorePaths::from_catalog_dir(const std::filesystem::path& catalog_dir) {
  StorePaths p;
  p.catalog_dir = catalog_dir;
  std::filesystem::path root = catalog_dir.parent_path();
  p.staging_dir = root / "staging";
  p.snapshots_dir = root / "snapshots";
  return p;
}

namespace {

void fsync_dir(const std::filesystem::path& dir) {
  int fd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC);
  if (fd < 0) throw IoError("cannot open dir " + dir.string() + ": " + std::strerror(errno));
  int rc = ::fsync(fd);
  ::close(fd);
  if (rc != 0) throw IoError("fsync dir " + dir.string() + " failed");
}

std::string iso_utc_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

uint64_t elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::steady_clock::now() - t0)
                                   .count());
}

std::string output_model_id(const MergePlan& plan) {
  nlohmann::json j{{"base_id", plan.base_id},
                   {"block_size_elements", plan.block_size_elements},
                   {"expert_ids", plan.expert_ids},
                   {"op", plan.op.to_json()},
                   {"selected_blocks_digest", plan.selected_blocks_digest()}};
  return "merged-" + canonical_digest(j).substr(0, 16);
}

ManifestRecord load_manifest_file(const std::filesystem::path& path, IoLedger* ledger) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read manifest " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string text = buf.str();
  if (ledger) ledger->charge(IoCat::kMetaIo, text.size());
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) throw CorruptData("manifest " + path.string() + " is not valid JSON");
  return ManifestRecord::from_json(j);
}

void write_file_synced(const std::filesystem::path& path, const std::string& content) {
  int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError("cannot write " + path.string() + ": " + std::strerror(errno));
  size_t done = 0;
  while (done < content.size()) {
    ssize_t n = ::write(fd, content.data() + done, content.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      int err = errno;
      ::close(fd);
      throw IoError("write " + path.string() + " failed: " + std::strerror(err));
    }
    done += static_cast<size_t>(n);
  }
  if (::fsync(fd) != 0) {
    ::close(fd);
    throw IoError("fsync " + path.string() + " failed");
  }
  ::close(fd);
}

// Per-block staging results, filled in parallel, consumed in order.
struct StagedBlock {
  std::string tensor_id;
  uint64_t block_idx = 0;
  uint64_t offset_bytes = 0;
  uint64_t length_bytes = 0;
  std::string hash;
  std::string expert_set_digest;
  bool surviving = false;
};

std::atomic<uint64_t> g_staging_seq{0};

// Publishes lineage records for a committed manifest. Idempotent.
void put_lineage(Catalog& catalog, const ManifestRecord& man,
                 const CheckpointHeader& header, uint64_t block_size_elements,
                 const std::vector<StagedBlock>& blocks) {
  for (const TensorMeta& tm : header.tensors) {
    TouchMapRecord touch;
    touch.sid = man.sid;
    touch.tensor_id = tm.name;
    touch.touched_blocks = {{0, block_count(tm.element_count(), block_size_elements)}};
    catalog.put(touch);
  }
  for (const StagedBlock& sb : blocks) {
    CoverageRecord cov;
    cov.sid = man.sid;
    cov.tensor_id = sb.tensor_id;
    cov.block_idx = sb.block_idx;
    cov.expert_set_digest = sb.expert_set_digest;
    cov.surviving = sb.surviving;
    catalog.put(cov);
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// execute_merge
// ---------------------------------------------------------------------------

MergeResult execute_merge(const MergePlan& plan, const StorePaths& store, Catalog& catalog,
                          IoLedger& ledger, const ExecuteOptions& opts) {
  auto t0 = std::chrono::steady_clock::now();
  plan.validate();

  if (opts.reuse) {
    auto existing = catalog.manifest_by_plan(plan.plan_id);
    if (existing && std::filesystem::exists(store.snapshot_manifest(existing->sid))) {
      ledger.set_wall_ms(elapsed_ms(t0));
      return {existing->sid, *existing, 0, true};
    }
  }

  CheckpointReader base(plan.base_path);
  ledger.charge(IoCat::kMetaIo, base.header_region_bytes());
  if (base.header().model_id != plan.base_id)
    throw CorruptData("plan base_id does not match checkpoint " + plan.base_path);
  if (plan.order.size() != base.tensor_count())
    throw CorruptData("plan order does not match base header");
  for (size_t t = 0; t < plan.order.size(); ++t) {
    if (plan.order[t] != base.tensor(t).name)
      throw CorruptData("plan order does not match base header");
  }

  std::vector<std::unique_ptr<CheckpointReader>> experts;
  for (size_t i = 0; i < plan.expert_paths.size(); ++i) {
    experts.push_back(std::make_unique<CheckpointReader>(plan.expert_paths[i]));
    ledger.charge(IoCat::kMetaIo, experts.back()->header_region_bytes());
    require_same_structure(base.header(), experts.back()->header());
    if (experts.back()->header().model_id != plan.expert_ids[i])
      throw CorruptData("expert id mismatch for " + plan.expert_paths[i]);
  }

  const uint64_t S = plan.block_size_elements;
  const uint32_t k_total = static_cast<uint32_t>(plan.expert_ids.size());

  // Selection index: tensor -> block -> ascending expert indices.
  std::map<std::string, std::vector<std::vector<uint32_t>>> sel;
  std::vector<uint64_t> tensor_block_base(base.tensor_count(), 0);
  uint64_t total_blocks = 0;
  for (size_t t = 0; t < base.tensor_count(); ++t) {
    const TensorMeta& tm = base.tensor(t);
    tensor_block_base[t] = total_blocks;
    uint64_t nblocks = block_count(tm.element_count(), S);
    total_blocks += nblocks;
    sel[tm.name].resize(nblocks);
  }
  for (const SelectedBlock& s : plan.selected) {
    const TensorMeta* tm = base.header().find(s.tensor_id);
    uint64_t nblocks = block_count(tm->element_count(), S);
    if (s.block_idx >= nblocks) throw CorruptData("plan selects block out of range");
    BlockSpan span = block_span(tm->element_count(), S, s.block_idx);
    if (s.bytes != span.element_count * dtype_size(tm->dtype))
      throw CorruptData("plan block size does not match checkpoint layout");
    sel[s.tensor_id][s.block_idx].push_back(s.expert_idx);
  }

  CheckpointHeader out_header = base.header();
  out_header.model_id = output_model_id(plan);

  std::error_code ec;
  std::filesystem::create_directories(store.staging_dir, ec);
  if (ec) throw IoError("cannot create staging dir: " + ec.message());
  std::string token = out_header.model_id + "-" + std::to_string(::getpid()) + "-" +
                      std::to_string(g_staging_seq.fetch_add(1));
  std::filesystem::path staged_path = store.staging_dir / (token + ".mpck");

  std::vector<StagedBlock> blocks(total_blocks);
  std::atomic<uint64_t> realized{0};
  uint64_t data_region_offset = 0;

  try {
    CheckpointWriter writer(staged_path, out_header);
    data_region_offset = writer.data_region_offset();
    ledger.charge(IoCat::kMetaIo, data_region_offset);  // magic + length + header
    internal::crash_point("stage_open");

    auto stage_tensor = [&](size_t t) {
      const TensorMeta& tm = base.tensor(t);
      const auto& sel_t = sel[tm.name];
      uint64_t n = tm.element_count();
      uint64_t nblocks = block_count(n, S);
      uint64_t td = tensor_digest64(tm.name);
      uint64_t dsize = dtype_size(tm.dtype);

      std::vector<uint8_t> raw;
      std::vector<uint8_t> encoded;
      std::vector<float> base_vals;
      std::vector<float> out_vals;
      std::vector<std::vector<float>> deltas;

      for (uint64_t b = 0; b < nblocks; ++b) {
        BlockSpan span = block_span(n, S, b);
        base.read_block_raw(t, b, S, raw);
        ledger.charge(IoCat::kBaseRead, raw.size());
        decode_values(raw, tm.dtype, base_vals);

        const std::vector<uint32_t>& chosen = sel_t[b];
        DeltaBatch batch;
        batch.tensor_id = tm.name;
        batch.tensor_digest = td;
        batch.block_start_element = span.start_element;
        batch.base = base_vals;
        deltas.resize(chosen.size());
        std::vector<std::string> chosen_ids;
        for (size_t i = 0; i < chosen.size(); ++i) {
          uint32_t e = chosen[i];
          experts[e]->read_block_raw(t, b, S, raw);
          ledger.charge(IoCat::kExpertRead, raw.size());
          realized.fetch_add(raw.size(), std::memory_order_relaxed);
          decode_values(raw, tm.dtype, deltas[i]);
          if (!plan.experts_are_deltas) {
            for (size_t j = 0; j < deltas[i].size(); ++j) deltas[i][j] -= base_vals[j];
          }
          batch.deltas.push_back({e, deltas[i]});
          chosen_ids.push_back(plan.expert_ids[e]);
        }

        if (batch.deltas.empty()) {
          out_vals = base_vals;  // pass-through, re-encoded below
        } else {
          apply_operator(batch, plan.op, k_total, out_vals);
        }
        encode_values(out_vals, tm.dtype, encoded);

        uint64_t offset = tm.offset_bytes + span.start_element * dsize;
        writer.write_at(offset, encoded);
        ledger.charge(IoCat::kOutputWrite, encoded.size());

        StagedBlock& sb = blocks[tensor_block_base[t] + b];
        sb.tensor_id = tm.name;
        sb.block_idx = b;
        sb.offset_bytes = offset;
        sb.length_bytes = encoded.size();
        sb.hash = sha256_hex(encoded.data(), encoded.size());
        sb.expert_set_digest = expert_set_digest(chosen_ids);
        sb.surviving = !batch.deltas.empty() &&
                       std::memcmp(out_vals.data(), base_vals.data(),
                                   out_vals.size() * sizeof(float)) != 0;
      }
      internal::crash_point("tensor_staged");
    };

    unsigned nthreads = std::max(1u, opts.threads);
    if (nthreads <= 1 || base.tensor_count() <= 1) {
      for (size_t t = 0; t < base.tensor_count(); ++t) stage_tensor(t);
    } else {
      std::atomic<size_t> next{0};
      std::exception_ptr first_error;
      std::mutex error_mu;
      std::vector<std::thread> pool;
      for (unsigned w = 0; w < nthreads; ++w) {
        pool.emplace_back([&] {
          while (true) {
            size_t t = next.fetch_add(1);
            if (t >= base.tensor_count()) break;
            try {
              stage_tensor(t);
            } catch (...) {
              std::lock_guard<std::mutex> lk(error_mu);
              if (!first_error) first_error = std::current_exception();
              break;
            }
          }
        });
      }
      for (auto& th : pool) th.join();
      if (first_error) std::rethrow_exception(first_error);
    }
    internal::crash_point("staged");

    // Validate staged hashes by re-reading what actually landed on disk.
    {
      int fd = ::open(staged_path.c_str(), O_RDONLY | O_CLOEXEC);
      if (fd < 0) throw IoError("cannot reopen staging file for validation");
      std::vector<uint8_t> buf;
      for (const StagedBlock& sb : blocks) {
        buf.resize(sb.length_bytes);
        uint64_t off = data_region_offset + sb.offset_bytes;
        size_t done = 0;
        while (done < buf.size()) {
          ssize_t r = ::pread(fd, buf.data() + done, buf.size() - done, off + done);
          if (r < 0 && errno == EINTR) continue;
          if (r <= 0) {
            ::close(fd);
            throw IoError("staging read failed during validation");
          }
          done += static_cast<size_t>(r);
        }
        ledger.charge(IoCat::kMetaIo, buf.size());
        if (sha256_hex(buf.data(), buf.size()) != sb.hash) {
          ::close(fd);
          throw VerificationError("staged block hash mismatch for " + sb.tensor_id + "/" +
                                  std::to_string(sb.block_idx));
        }
      }
      ::close(fd);
    }
    internal::crash_point("validated");

    writer.sync_close();
    internal::crash_point("staging_synced");
  } catch (...) {
    std::error_code rm;
    std::filesystem::remove(staged_path, rm);  // abort leaves no staged bytes behind
    throw;
  }

  ManifestRecord man;
  man.plan_id = plan.plan_id;
  man.base_id = plan.base_id;
  man.expert_ids = plan.expert_ids;
  man.op = plan.op;
  man.budget_b = plan.budget_b;
  man.realized_expert_cost = realized.load();
  man.output_root = "snapshots";
  man.created_at = iso_utc_now();
  for (const StagedBlock& sb : blocks)
    man.block_map.push_back({sb.tensor_id, sb.block_idx, sb.offset_bytes, sb.length_bytes, sb.hash});
  man.sid = man.compute_sid();

  std::filesystem::path manifest_path = store.snapshot_manifest(man.sid);
  if (std::filesystem::exists(manifest_path)) {
    // Same content already committed: deduplicate, keep the stored record.
    ManifestRecord existing = load_manifest_file(manifest_path, &ledger);
    if (!existing.same_content_ignoring_created_at(man)) {
      std::error_code rm;
      std::filesystem::remove(staged_path, rm);
      throw ImmutabilityViolation("snapshot " + man.sid + " exists with different content");
    }
    std::error_code rm;
    std::filesystem::remove(staged_path, rm);
    ManifestRecord stored = catalog.put_manifest(existing);
    put_lineage(catalog, stored, out_header, S, blocks);
    catalog.flush();
    ledger.set_wall_ms(elapsed_ms(t0));
    return {stored.sid, stored, realized.load(), true};
  }

  std::filesystem::create_directories(store.snapshots_dir / man.sid, ec);
  if (ec) throw IoError("cannot create snapshot dir: " + ec.message());
  internal::crash_point("snapshot_dir_created");

  std::filesystem::rename(staged_path, store.snapshot_data(man.sid), ec);
  if (ec) throw IoError("cannot move staged data: " + ec.message());
  fsync_dir(store.snapshots_dir / man.sid);
  internal::crash_point("data_moved");

  ManifestRecord stored = catalog.put_manifest(man);
  internal::crash_point("catalog_manifest");
  put_lineage(catalog, stored, out_header, S, blocks);
  internal::crash_point("catalog_lineage");
  catalog.flush();
  internal::crash_point("catalog_flushed");

  std::string manifest_text = canonical_json(stored.to_json());
  manifest_text.push_back('\n');
  std::filesystem::path tmp_path = store.snapshots_dir / ("." + man.sid + ".manifest.tmp");
  write_file_synced(tmp_path, manifest_text);
  ledger.charge(IoCat::kMetaIo, manifest_text.size());
  internal::crash_point("manifest_tmp_written");

  std::filesystem::rename(tmp_path, manifest_path, ec);  // the commit point
  if (ec) throw IoError("manifest rename failed: " + ec.message());
  internal::crash_point("manifest_committed");
  fsync_dir(store.snapshots_dir);
  internal::crash_point("snapshots_dir_synced");

  ledger.set_wall_ms(elapsed_ms(t0));
  return {stored.sid, stored, realized.load(), false};
}

// ---------------------------------------------------------------------------
// naive_merge
// ---------------------------------------------------------------------------

MergeResult naive_merge(const std::filesystem::path& base_path,
                        const std::vector<std::filesystem::path>& expert_paths,
                        const OperatorSpec& op, const StorePaths& store, Catalog& catalog,
                        IoLedger& ledger, uint64_t block_size_elements,
                        bool experts_are_deltas, unsigned threads) {
  if (expert_paths.empty()) throw InvalidArgument("naive merge requires at least one expert");
  if (block_size_elements == 0) throw InvalidArgument("block size must be >= 1");
  op.validate();

  MergePlan plan;
  {
    CheckpointReader base(base_path);
    ledger.charge(IoCat::kMetaIo, base.header_region_bytes());
    plan.base_id = base.header().model_id;
    plan.base_path = base_path.string();
    plan.experts_are_deltas = experts_are_deltas;
    plan.op = op;
    plan.block_size_elements = block_size_elements;
    for (const TensorMeta& tm : base.header().tensors) plan.order.push_back(tm.name);

    uint64_t naive_cost = 0;
    for (size_t i = 0; i < expert_paths.size(); ++i) {
      CheckpointReader er(expert_paths[i]);
      ledger.charge(IoCat::kMetaIo, er.header_region_bytes());
      require_same_structure(base.header(), er.header());
      plan.expert_ids.push_back(er.header().model_id);
      plan.expert_paths.push_back(expert_paths[i].string());
      naive_cost += er.header().payload_bytes();
    }
    std::set<std::string> uniq(plan.expert_ids.begin(), plan.expert_ids.end());
    if (uniq.size() != plan.expert_ids.size() || uniq.count(plan.base_id))
      throw InvalidArgument("base and expert model ids must be distinct");

    // everything selected: no planning, no budget enforcement
    for (uint32_t i = 0; i < plan.expert_ids.size(); ++i) {
      for (const TensorMeta& tm : base.header().tensors) {
        uint64_t n = tm.element_count();
        uint64_t nblocks = block_count(n, block_size_elements);
        for (uint64_t b = 0; b < nblocks; ++b) {
          BlockSpan span = block_span(n, block_size_elements, b);
          plan.selected.push_back(
              {i, tm.name, b, span.element_count * dtype_size(tm.dtype)});
        }
      }
    }
    std::sort(plan.selected.begin(), plan.selected.end());
    plan.budget_b = naive_cost;
    plan.estimated_expert_cost = naive_cost;
    plan.plan_id = plan.compute_plan_id();
    plan.validate();
  }
  catalog.put(plan.record());

  ExecuteOptions opts;
  opts.threads = threads;
  return execute_merge(plan, store, catalog, ledger, opts);
}

// ---------------------------------------------------------------------------
// verify / list / diff
// ---------------------------------------------------------------------------

nlohmann::json VerifyReport::to_json() const {
  return nlohmann::json{
      {"sid", sid}, {"ok", ok}, {"blocks_checked", blocks_checked}, {"failures", failures}};
}

VerifyReport verify_snapshot(const StorePaths& store, const std::string& sid,
                             IoLedger* ledger) {
  std::filesystem::path manifest_path = store.snapshot_manifest(sid);
  if (!std::filesystem::exists(manifest_path))
    throw IoError("snapshot " + sid + " not found in " + store.snapshots_dir.string());
  ManifestRecord man = load_manifest_file(manifest_path, ledger);

  VerifyReport rep;
  rep.sid = sid;
  if (man.sid != sid) rep.failures.push_back("manifest names a different sid");
  if (man.compute_sid() != man.sid)
    rep.failures.push_back("sid does not match manifest content digest");
  if (man.realized_expert_cost > man.budget_b)
    rep.failures.push_back("realized expert cost exceeds budget");

  try {
    CheckpointReader reader(store.snapshot_data(sid));
    if (ledger) ledger->charge(IoCat::kMetaIo, reader.header_region_bytes());
    const CheckpointHeader& h = reader.header();

    // Block map must tile exactly the tensors the header declares.
    std::map<std::string, uint64_t> covered;  // tensor -> bytes seen (tiled in order)
    std::map<std::string, uint64_t> expect_offset;
    for (const TensorMeta& tm : h.tensors) expect_offset[tm.name] = tm.offset_bytes;
    bool layout_ok = true;
    for (const BlockMapEntry& e : man.block_map) {
      auto it = expect_offset.find(e.tensor_id);
      if (it == expect_offset.end() || e.offset_bytes != it->second) {
        layout_ok = false;
        break;
      }
      it->second += e.length_bytes;
      covered[e.tensor_id] += e.length_bytes;
    }
    if (layout_ok) {
      for (const TensorMeta& tm : h.tensors) {
        if (covered[tm.name] != tm.length_bytes) {
          layout_ok = false;
          break;
        }
      }
    }
    if (!layout_ok) {
      rep.failures.push_back("block map does not tile the output tensors");
    } else {
      int fd = ::open(store.snapshot_data(sid).c_str(), O_RDONLY | O_CLOEXEC);
      if (fd < 0) throw IoError("cannot open snapshot payload");
      std::vector<uint8_t> buf;
      for (const BlockMapEntry& e : man.block_map) {
        buf.resize(e.length_bytes);
        uint64_t off = reader.header_region_bytes() + e.offset_bytes;
        size_t done = 0;
        bool short_read = false;
        while (done < buf.size()) {
          ssize_t r = ::pread(fd, buf.data() + done, buf.size() - done, off + done);
          if (r < 0 && errno == EINTR) continue;
          if (r <= 0) {
            short_read = true;
            break;
          }
          done += static_cast<size_t>(r);
        }
        if (ledger) ledger->charge(IoCat::kMetaIo, done);
        if (short_read) {
          rep.failures.push_back("payload truncated at " + e.tensor_id + "/" +
                                 std::to_string(e.block_idx));
          break;
        }
        if (sha256_hex(buf.data(), buf.size()) != e.hash) {
          rep.failures.push_back("block hash mismatch at " + e.tensor_id + "/" +
                                 std::to_string(e.block_idx));
        }
        ++rep.blocks_checked;
      }
      ::close(fd);
    }
  } catch (const Error& e) {
    rep.failures.push_back(std::string("payload unreadable: ") + e.what());
  }

  rep.ok = rep.failures.empty();
  return rep;
}

std::vector<std::string> list_snapshots(const StorePaths& store) {
  std::vector<std::string> sids;
  std::error_code ec;
  if (!std::filesystem::is_directory(store.snapshots_dir, ec)) return sids;
  const std::string suffix = ".manifest.json";
  for (const auto& entry : std::filesystem::directory_iterator(store.snapshots_dir, ec)) {
    if (!entry.is_regular_file()) continue;
    std::string name = entry.path().filename().string();
    if (name.size() > suffix.size() && name.compare(name.size() - suffix.size(),
                                                    suffix.size(), suffix) == 0 &&
        name[0] != '.') {
      sids.push_back(name.substr(0, name.size() - suffix.size()));
    }
  }
  std::sort(sids.begin(), sids.end());
  return sids;
}

nlohmann::json DiffReport::to_json() const {
  auto opt = [](const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return nlohmann::json{{"sid_a", sid_a},
                        {"sid_b", sid_b},
                        {"rel_l2", rel_l2},
                        {"p95_block_rel", p95_block_rel},
                        {"blocks", blocks},
                        {"touched_fraction_a", opt(touched_fraction_a)},
                        {"touched_fraction_b", opt(touched_fraction_b)},
                        {"surviving_fraction_a", opt(surviving_fraction_a)},
                        {"surviving_fraction_b", opt(surviving_fraction_b)}};
}

namespace {

// Lineage fractions for one snapshot, denominated in the block map's own
// block count (the layout the merge ran under).
void lineage_fractions(const Catalog& catalog, const ManifestRecord& man,
                       std::optional<double>& touched, std::optional<double>& surviving) {
  double total = static_cast<double>(man.block_map.size());
  if (total == 0) return;
  auto touch = catalog.touch_map_range(man.sid);
  if (!touch.empty()) {
    uint64_t n = 0;
    for (const auto& rec : touch)
      for (const auto& r : rec.touched_blocks) n += r[1] - r[0];
    touched = static_cast<double>(n) / total;
  }
  auto cov = catalog.coverage_range(man.sid);
  if (!cov.empty()) {
    uint64_t n = 0;
    for (const auto& rec : cov)
      if (rec.surviving) ++n;
    surviving = static_cast<double>(n) / total;
  }
}

}  // namespace

DiffReport snapshot_diff(const StorePaths& store, const Catalog& catalog,
                         const std::string& sid_a, const std::string& sid_b,
                         uint64_t block_size_elements) {
  if (block_size_elements == 0) throw InvalidArgument("block size must be >= 1");
  for (const std::string& sid : {sid_a, sid_b}) {
    if (!std::filesystem::exists(store.snapshot_manifest(sid)))
      throw IoError("snapshot " + sid + " not found");
  }
  ManifestRecord man_a = load_manifest_file(store.snapshot_manifest(sid_a), nullptr);
  ManifestRecord man_b = load_manifest_file(store.snapshot_manifest(sid_b), nullptr);
  CheckpointReader ra(store.snapshot_data(sid_a));
  CheckpointReader rb(store.snapshot_data(sid_b));
  require_same_structure(ra.header(), rb.header());

  DiffReport rep;
  rep.sid_a = sid_a;
  rep.sid_b = sid_b;

  double sumsq_diff = 0.0;
  double sumsq_b = 0.0;
  std::vector<double> block_rel;
  for (size_t t = 0; t < ra.tensor_count(); ++t) {
    const TensorMeta& tm = ra.tensor(t);
    uint64_t nblocks = block_count(tm.element_count(), block_size_elements);
    for (uint64_t b = 0; b < nblocks; ++b) {
      std::vector<float> av = ra.read_block_f32(t, b, block_size_elements);
      std::vector<float> bv = rb.read_block_f32(t, b, block_size_elements);
      double bd = 0.0;
      double bb = 0.0;
      for (size_t j = 0; j < av.size(); ++j) {
        double d = static_cast<double>(av[j]) - static_cast<double>(bv[j]);
        bd += d * d;
        bb += static_cast<double>(bv[j]) * static_cast<double>(bv[j]);
      }
      sumsq_diff += bd;
      sumsq_b += bb;
      double rel;
      if (bb > 0.0) {
        rel = std::sqrt(bd) / std::sqrt(bb);
      } else {
        rel = bd > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
      }
      block_rel.push_back(rel);
    }
  }
  rep.blocks = block_rel.size();
  if (sumsq_b > 0.0) {
    rep.rel_l2 = std::sqrt(sumsq_diff) / std::sqrt(sumsq_b);
  } else {
    rep.rel_l2 = sumsq_diff > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  if (!block_rel.empty()) {
    std::sort(block_rel.begin(), block_rel.end());
    size_t rank = static_cast<size_t>(
        std::ceil(0.95 * static_cast<double>(block_rel.size())));
    if (rank == 0) rank = 1;
    rep.p95_block_rel = block_rel[rank - 1];
  }

  lineage_fractions(catalog, man_a, rep.touched_fraction_a, rep.surviving_fraction_a);
  lineage_fractions(catalog, man_b, rep.touched_fraction_b, rep.surviving_fraction_b);
  return rep;
}

}  // namespace mergepipe
