#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mergepipe/checkpoint.hpp"
#include "mergepipe/engine.hpp"
#include "mergepipe/metrics.hpp"
#include "mergepipe/op_spec.hpp"
#include "mergepipe/workload.hpp"

namespace mergepipe {

// Shared setup for the measurement sweeps. Workload files and stores live
// under `root`; every sweep reuses whatever is already there, so repeated
// invocations are cheap and give identical rows.
struct BenchConfig {
  std::filesystem::path root;
  OperatorSpec op;
  uint64_t block_size_elements = kDefaultBlockElements;
  uint64_t total_elements = 16ull << 20;
  uint64_t seed = 4242;
  DType dtype = DType::kF32;
  double divergence = 0.05;
  double hot_fraction = 0.25;
  unsigned threads = 1;
};

// One full budgeted pipeline against an existing store: sketch the first k
// experts if the catalog lacks them, plan under `budget_text` (fraction of
// the naive cost when it contains '.', bytes otherwise), execute, publish.
// The returned row carries this run's complete I/O ledger.
RunRow run_mergepipe(const Workload& w, uint32_t k, const OperatorSpec& op,
                     const std::string& budget_text, uint64_t block_size_elements,
                     const StorePaths& store, unsigned threads = 1);

// Unbudgeted single-pass baseline over the same inputs. budget column is 0.
RunRow run_naive(const Workload& w, uint32_t k, const OperatorSpec& op,
                 uint64_t block_size_elements, const StorePaths& store,
                 unsigned threads = 1);

// Expert-count sweep: one naive row and one budgeted row per k.
std::vector<RunRow> bench_scaling(const BenchConfig& cfg, const std::vector<uint32_t>& ks,
                                  const std::string& budget_text);

// Budget sweep at fixed k, fractions of the naive cost in (0, 1].
std::vector<RunRow> bench_budget(const BenchConfig& cfg, uint32_t k,
                                 const std::vector<double>& fractions);

// Block-size sweep at fixed k and fixed budget; re-sketches per size.
std::vector<RunRow> bench_block_size(const BenchConfig& cfg, uint32_t k,
                                     const std::vector<uint64_t>& block_sizes,
                                     const std::string& budget_text);

// Repeats the identical pipeline in fresh stores; rows must agree on sid and
// expert_read if the system is deterministic.
std::vector<RunRow> bench_stability(const BenchConfig& cfg, uint32_t k,
                                    const std::string& budget_text, uint32_t repeats = 5);

}  // namespace mergepipe
