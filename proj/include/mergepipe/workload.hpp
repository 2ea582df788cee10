#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mergepipe/dtype.hpp"
#include "mergepipe/metrics.hpp"

namespace mergepipe {

// Synthetic fine-tune family: one base checkpoint plus K experts that differ
// from it only inside scattered "hot" regions. Fully determined by WorkloadSpec,
// so two runs with equal parameters produce byte-identical files.
struct WorkloadSpec {
  uint64_t total_elements = 16ull << 20;  // 64 MiB at f32
  uint32_t experts = 4;
  uint64_t seed = 4242;
  DType dtype = DType::kF32;
  double divergence = 0.05;    // typical delta magnitude relative to base
  double hot_fraction = 0.25;  // fraction of regions an expert actually moved
};

struct Workload {
  std::string base_id;
  std::filesystem::path base_path;
  std::vector<std::string> expert_ids;
  std::vector<std::filesystem::path> expert_paths;
};

// Writes base + experts into dir as <model_id>.mpck plus a workload.json
// index. Model ids are content-derived ("w-" + 16 hex of the payload hash),
// so regenerating never collides with a differently-parameterized family.
Workload gen_workload(const std::filesystem::path& dir, const WorkloadSpec& spec,
                      IoLedger* ledger = nullptr);

// Reads the workload.json index written by gen_workload.
Workload load_workload(const std::filesystem::path& dir);

}  // namespace mergepipe
