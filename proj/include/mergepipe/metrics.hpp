#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

namespace mergepipe {

enum class IoCat : int {
  kBaseRead = 0,
  kExpertRead = 1,
  kOutputWrite = 2,
  kMetaIo = 3,
};

// Thread-safe byte/operation counters for one run. Charged at the single
// point where payload or metadata bytes actually move.
class IoLedger {
 public:
  void charge(IoCat cat, uint64_t bytes) {
    bytes_[int(cat)].fetch_add(bytes, std::memory_order_relaxed);
    ops_[int(cat)].fetch_add(1, std::memory_order_relaxed);
  }

  uint64_t base_read() const { return bytes_[0].load(std::memory_order_relaxed); }
  uint64_t expert_read() const { return bytes_[1].load(std::memory_order_relaxed); }
  uint64_t output_write() const { return bytes_[2].load(std::memory_order_relaxed); }
  uint64_t meta_io() const { return bytes_[3].load(std::memory_order_relaxed); }
  uint64_t bytes(IoCat cat) const { return bytes_[int(cat)].load(std::memory_order_relaxed); }
  uint64_t ops(IoCat cat) const { return ops_[int(cat)].load(std::memory_order_relaxed); }

  uint64_t total() const {
    return base_read() + expert_read() + output_write() + meta_io();
  }

  void set_wall_ms(uint64_t ms) { wall_ms_.store(ms, std::memory_order_relaxed); }
  uint64_t wall_ms() const { return wall_ms_.load(std::memory_order_relaxed); }

 private:
  std::atomic<uint64_t> bytes_[4] = {0, 0, 0, 0};
  std::atomic<uint64_t> ops_[4] = {0, 0, 0, 0};
  std::atomic<uint64_t> wall_ms_ = 0;
};

// One exported measurement row. `mode` distinguishes naive and budgeted runs
// in bench output; `budget` is 0 for unbudgeted (naive) rows.
struct RunRow {
  std::string mode;
  uint64_t k = 0;
  std::string op;
  uint64_t budget = 0;
  uint64_t base_read = 0;
  uint64_t expert_read = 0;
  uint64_t output_write = 0;
  uint64_t meta_io = 0;
  uint64_t wall_ms = 0;
  std::string sid;

  nlohmann::json to_json() const;
};

RunRow make_row(const std::string& mode, uint64_t k, const std::string& op,
                uint64_t budget, const IoLedger& ledger, const std::string& sid);

std::string metrics_csv_header();
std::string metrics_csv_line(const RunRow& row);

// Writes rows as CSV or a JSON array depending on the file extension
// (.json -> JSON, anything else -> CSV).
void write_metrics(const std::filesystem::path& path, const std::vector<RunRow>& rows);

}  // namespace mergepipe
