#include "mergepipe/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>

#include "mergepipe/analyzer.hpp"
#include "mergepipe/catalog.hpp"
#include "mergepipe/cost_model.hpp"
#include "mergepipe/errors.hpp"
#include "mergepipe/planner.hpp"

namespace mergepipe {

namespace {

uint64_t elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::steady_clock::now() - t0)
                                   .count());
}

bool sketches_present(const Catalog& catalog, const CheckpointHeader& h, uint64_t s,
                      const std::string* require_delta_base) {
  for (const TensorMeta& tm : h.tensors) {
    uint64_t nblocks = block_count(tm.element_count(), s);
    for (uint64_t b = 0; b < nblocks; ++b) {
      auto rec = catalog.get_block_meta(h.model_id, tm.name, b);
      if (!rec || rec->layout != s) return false;
      if (require_delta_base &&
          (!rec->sketch.delta_l2 || !rec->sketch.delta_base_id ||
           *rec->sketch.delta_base_id != *require_delta_base)) {
        return false;
      }
    }
  }
  return true;
}

std::vector<std::filesystem::path> first_k(const Workload& w, uint32_t k) {
  if (k == 0 || k > w.expert_paths.size())
    throw InvalidArgument("workload has " + std::to_string(w.expert_paths.size()) +
                          " experts, requested " + std::to_string(k));
  return {w.expert_paths.begin(), w.expert_paths.begin() + k};
}

}  // namespace

RunRow run_mergepipe(const Workload& w, uint32_t k, const OperatorSpec& op,
                     const std::string& budget_text, uint64_t block_size_elements,
                     const StorePaths& store, unsigned threads) {
  auto t0 = std::chrono::steady_clock::now();
  auto experts = first_k(w, k);
  IoLedger ledger;
  Catalog catalog(store.catalog_dir, Catalog::Mode::kReadWrite, &ledger);

  uint64_t naive_cost = 0;
  {
    CheckpointReader base(w.base_path);
    ledger.charge(IoCat::kMetaIo, base.header_region_bytes());
    if (!sketches_present(catalog, base.header(), block_size_elements, nullptr))
      analyze_model(w.base_path, catalog, block_size_elements, &ledger);
    for (const auto& path : experts) {
      CheckpointReader er(path);
      ledger.charge(IoCat::kMetaIo, er.header_region_bytes());
      naive_cost += er.header().payload_bytes();
      if (!sketches_present(catalog, er.header(), block_size_elements, &w.base_id))
        analyze_delta(path, w.base_path, catalog, block_size_elements, false, &ledger);
    }
  }

  uint64_t budget = parse_budget(budget_text, naive_cost);
  MergePlan plan = plan_gen(w.base_path, experts, op, budget, catalog,
                            block_size_elements, false, &ledger);
  ExecuteOptions opts;
  opts.threads = threads;
  MergeResult res = execute_merge(plan, store, catalog, ledger, opts);
  ledger.set_wall_ms(elapsed_ms(t0));
  return make_row("mergepipe", k, to_string(op.kind), budget, ledger, res.sid);
}

RunRow run_naive(const Workload& w, uint32_t k, const OperatorSpec& op,
                 uint64_t block_size_elements, const StorePaths& store, unsigned threads) {
  auto t0 = std::chrono::steady_clock::now();
  auto experts = first_k(w, k);
  IoLedger ledger;
  Catalog catalog(store.catalog_dir, Catalog::Mode::kReadWrite, &ledger);
  MergeResult res = naive_merge(w.base_path, experts, op, store, catalog, ledger,
                                block_size_elements, false, threads);
  ledger.set_wall_ms(elapsed_ms(t0));
  return make_row("naive", k, to_string(op.kind), 0, ledger, res.sid);
}

std::vector<RunRow> bench_scaling(const BenchConfig& cfg, const std::vector<uint32_t>& ks,
                                  const std::string& budget_text) {
  if (ks.empty()) throw InvalidArgument("scaling sweep needs at least one k");
  WorkloadSpec ws;
  ws.total_elements = cfg.total_elements;
  ws.experts = *std::max_element(ks.begin(), ks.end());
  ws.seed = cfg.seed;
  ws.dtype = cfg.dtype;
  ws.divergence = cfg.divergence;
  ws.hot_fraction = cfg.hot_fraction;
  Workload w = gen_workload(cfg.root / "workload", ws);
  StorePaths store = StorePaths::from_catalog_dir(cfg.root / "store" / "catalog");

  std::vector<RunRow> rows;
  for (uint32_t k : ks) {
    rows.push_back(run_naive(w, k, cfg.op, cfg.block_size_elements, store, cfg.threads));
    rows.push_back(run_mergepipe(w, k, cfg.op, budget_text, cfg.block_size_elements,
                                 store, cfg.threads));
  }
  return rows;
}

std::vector<RunRow> bench_budget(const BenchConfig& cfg, uint32_t k,
                                 const std::vector<double>& fractions) {
  if (fractions.empty()) throw InvalidArgument("budget sweep needs at least one fraction");
  WorkloadSpec ws;
  ws.total_elements = cfg.total_elements;
  ws.experts = k;
  ws.seed = cfg.seed;
  ws.dtype = cfg.dtype;
  ws.divergence = cfg.divergence;
  ws.hot_fraction = cfg.hot_fraction;
  Workload w = gen_workload(cfg.root / "workload", ws);
  StorePaths store = StorePaths::from_catalog_dir(cfg.root / "store" / "catalog");

  std::vector<RunRow> rows;
  for (double f : fractions) {
    if (!(f > 0.0) || f > 1.0)
      throw InvalidArgument("budget fraction must be in (0, 1]");
    char text[32];
    std::snprintf(text, sizeof text, "%.9f", f);
    rows.push_back(run_mergepipe(w, k, cfg.op, text, cfg.block_size_elements, store,
                                 cfg.threads));
  }
  return rows;
}

std::vector<RunRow> bench_block_size(const BenchConfig& cfg, uint32_t k,
                                     const std::vector<uint64_t>& block_sizes,
                                     const std::string& budget_text) {
  if (block_sizes.empty()) throw InvalidArgument("block-size sweep needs at least one size");
  WorkloadSpec ws;
  ws.total_elements = cfg.total_elements;
  ws.experts = k;
  ws.seed = cfg.seed;
  ws.dtype = cfg.dtype;
  ws.divergence = cfg.divergence;
  ws.hot_fraction = cfg.hot_fraction;
  Workload w = gen_workload(cfg.root / "workload", ws);
  StorePaths store = StorePaths::from_catalog_dir(cfg.root / "store" / "catalog");

  std::vector<RunRow> rows;
  for (uint64_t s : block_sizes)
    rows.push_back(run_mergepipe(w, k, cfg.op, budget_text, s, store, cfg.threads));
  return rows;
}

std::vector<RunRow> bench_stability(const BenchConfig& cfg, uint32_t k,
                                    const std::string& budget_text, uint32_t repeats) {
  if (repeats == 0) throw InvalidArgument("stability sweep needs at least one repeat");
  WorkloadSpec ws;
  ws.total_elements = cfg.total_elements;
  ws.experts = k;
  ws.seed = cfg.seed;
  ws.dtype = cfg.dtype;
  ws.divergence = cfg.divergence;
  ws.hot_fraction = cfg.hot_fraction;
  Workload w = gen_workload(cfg.root / "workload", ws);

  std::vector<RunRow> rows;
  for (uint32_t r = 0; r < repeats; ++r) {
    StorePaths store = StorePaths::from_catalog_dir(
        cfg.root / ("run-" + std::to_string(r)) / "catalog");
    rows.push_back(run_mergepipe(w, k, cfg.op, budget_text, cfg.block_size_elements,
                                 store, cfg.threads));
  }
  return rows;
}

}  // namespace mergepipe
