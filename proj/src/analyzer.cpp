#include "mergepipe/analyzer.hpp"

#include <cmath>
#include <vector>

#include "mergepipe/errors.hpp"
#include "mergepipe/sha256.hpp"

namespace mergepipe {

namespace {

BlockMetaRecord intrinsic_record(const std::string& model_id, const TensorMeta& tm,
                                 uint64_t block_idx, uint64_t block_size_elements,
                                 const std::vector<uint8_t>& raw,
                                 const std::vector<float>& values) {
  BlockMetaRecord rec;
  rec.model_id = model_id;
  rec.tensor_id = tm.name;
  rec.block_idx = block_idx;
  rec.bytes = raw.size();
  rec.shape = values.size();
  rec.dtype = tm.dtype;
  rec.hash = sha256_hex(raw.data(), raw.size());
  rec.layout = block_size_elements;
  double sumsq = 0.0;
  double max_abs = 0.0;
  uint64_t pos = 0;
  for (float v : values) {
    double d = v;
    sumsq += d * d;
    double a = std::fabs(d);
    if (a > max_abs) max_abs = a;
    if (v > 0.0f) ++pos;
  }
  rec.sketch.l2_norm = std::sqrt(sumsq);
  rec.sketch.max_abs = max_abs;
  rec.sketch.sign_pos_count = pos;
  return rec;
}

}  // namespace

uint64_t analyze_model(const std::filesystem::path& checkpoint, Catalog& catalog,
                       uint64_t block_size_elements, IoLedger* ledger) {
  if (block_size_elements == 0) throw InvalidArgument("block size must be >= 1");
  CheckpointReader reader(checkpoint);
  if (ledger) ledger->charge(IoCat::kMetaIo, reader.header_region_bytes());
  const std::string& model_id = reader.header().model_id;

  uint64_t written = 0;
  std::vector<uint8_t> raw;
  std::vector<float> values;
  for (size_t t = 0; t < reader.tensor_count(); ++t) {
    const TensorMeta& tm = reader.tensor(t);
    uint64_t nblocks = block_count(tm.element_count(), block_size_elements);
    for (uint64_t b = 0; b < nblocks; ++b) {
      reader.read_block_raw(t, b, block_size_elements, raw);
      if (ledger) ledger->charge(IoCat::kMetaIo, raw.size());
      decode_values(raw, tm.dtype, values);
      BlockMetaRecord rec =
          intrinsic_record(model_id, tm, b, block_size_elements, raw, values);
      auto existing = catalog.get_block_meta(model_id, tm.name, b);
      // Unchanged block: leave the record alone. This also preserves any
      // delta sketch a prior analyze_delta attached.
      if (existing && existing->hash == rec.hash && existing->layout == rec.layout) continue;
      if (catalog.put(rec)) ++written;
    }
  }
  return written;
}

uint64_t analyze_delta(const std::filesystem::path& expert, const std::filesystem::path& base,
                       Catalog& catalog, uint64_t block_size_elements, bool expert_is_delta,
                       IoLedger* ledger) {
  if (block_size_elements == 0) throw InvalidArgument("block size must be >= 1");
  CheckpointReader er(expert);
  CheckpointReader br(base);
  if (ledger)
    ledger->charge(IoCat::kMetaIo, er.header_region_bytes() + br.header_region_bytes());
  require_same_structure(br.header(), er.header());
  const std::string& expert_id = er.header().model_id;
  const std::string& base_id = br.header().model_id;

  uint64_t written = 0;
  std::vector<uint8_t> raw;
  std::vector<float> evalues;
  std::vector<float> bvalues;
  for (size_t t = 0; t < er.tensor_count(); ++t) {
    const TensorMeta& tm = er.tensor(t);
    uint64_t nblocks = block_count(tm.element_count(), block_size_elements);
    for (uint64_t b = 0; b < nblocks; ++b) {
      er.read_block_raw(t, b, block_size_elements, raw);
      if (ledger) ledger->charge(IoCat::kMetaIo, raw.size());
      decode_values(raw, tm.dtype, evalues);

      double sumsq = 0.0;
      if (expert_is_delta) {
        // the file stores deltas already; base contributes implicit zero
        for (float v : evalues) sumsq += static_cast<double>(v) * static_cast<double>(v);
      } else {
        bvalues = br.read_block_f32(t, b, block_size_elements);
        if (ledger)
          ledger->charge(IoCat::kMetaIo, bvalues.size() * dtype_size(tm.dtype));
        for (size_t j = 0; j < evalues.size(); ++j) {
          float d = evalues[j] - bvalues[j];
          sumsq += static_cast<double>(d) * static_cast<double>(d);
        }
      }

      BlockMetaRecord rec;
      auto existing = catalog.get_block_meta(expert_id, tm.name, b);
      std::string hash = sha256_hex(raw.data(), raw.size());
      if (existing && existing->hash == hash && existing->layout == block_size_elements) {
        rec = *existing;
      } else {
        rec = intrinsic_record(expert_id, tm, b, block_size_elements, raw, evalues);
      }
      rec.sketch.delta_l2 = std::sqrt(sumsq);
      rec.sketch.delta_base_id = base_id;
      if (catalog.put(rec)) ++written;
    }
  }
  return written;
}

}  // namespace mergepipe
