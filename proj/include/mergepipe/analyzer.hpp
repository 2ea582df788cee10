#pragma once

#include <cstdint>
#include <filesystem>

#include "mergepipe/catalog.hpp"
#include "mergepipe/checkpoint.hpp"
#include "mergepipe/metrics.hpp"

namespace mergepipe {

// Computes and persists one BlockMetaRecord per block (hash + intrinsic
// sketch). Records whose hash and layout already match are left untouched,
// so a re-run appends nothing. Returns the number of records written.
// Analysis reads are charged to META: the merge budget covers only
// merge-time expert reads.
uint64_t analyze_model(const std::filesystem::path& checkpoint, Catalog& catalog,
                       uint64_t block_size_elements, IoLedger* ledger = nullptr);

// Computes per-block delta sketches of an expert against a base with
// identical structure and stores them into the expert's BlockMetaRecords
// (creating records as needed). With expert_is_delta the expert file already
// stores deltas and the base payload is an implicit zero. Returns the number
// of records written or updated.
uint64_t analyze_delta(const std::filesystem::path& expert, const std::filesystem::path& base,
                       Catalog& catalog, uint64_t block_size_elements,
                       bool expert_is_delta = false, IoLedger* ledger = nullptr);

}  // namespace mergepipe
