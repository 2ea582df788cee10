#include "mergepipe/workload.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mergepipe/checkpoint.hpp"
#include "mergepipe/errors.hpp"
#include "mergepipe/operators.hpp"
#include "mergepipe/sha256.hpp"

namespace mergepipe {

namespace {

// Distinct hash64 channels so base values, per-expert deltas, and region
// masks never correlate.
constexpr uint64_t kBaseChannel = 0xB15E0000ull;
constexpr uint64_t kDeltaChannel = 0xDE170000ull;
constexpr uint64_t kMaskChannel = 0x3A5C0000ull;
constexpr uint64_t kScaleChannel = 0xCA1E0000ull;

// Hot/cold granularity, in elements. Independent of any block size a later
// analysis may choose; 64Ki divides every power-of-two block layout in use.
constexpr uint64_t kRegionElements = 64ull * 1024;

struct TensorPlan {
  std::string name;
  uint64_t weight;
};

const std::vector<TensorPlan>& tensor_plans() {
  static const std::vector<TensorPlan> plans = {
      {"embed.weight", 8},        {"layers.0.attn.wq", 4}, {"layers.0.attn.wk", 4},
      {"layers.0.mlp.w1", 4},     {"layers.1.attn.wq", 4}, {"layers.1.mlp.w1", 4},
      {"layers.1.mlp.w2", 2},     {"head.weight", 2}};
  return plans;
}

double gauss(uint64_t seed, uint64_t channel, uint64_t td, uint64_t j) {
  double u1 = 1.0 - uniform01(hash64(seed, channel, td, 2 * j));
  double u2 = uniform01(hash64(seed, channel, td, 2 * j + 1));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::vector<uint64_t> pick_shape(uint64_t n) {
  if (n % 64 == 0 && n >= 128) return {n / 64, 64};
  return {n};
}

std::string payload_id(const std::vector<TensorInit>& tensors) {
  Sha256 h;
  std::vector<uint8_t> raw;
  for (const TensorInit& t : tensors) {
    encode_values(t.values, t.dtype, raw);
    h.update(raw.data(), raw.size());
  }
  return "w-" + h.finish_hex().substr(0, 16);
}

nlohmann::json spec_json(const WorkloadSpec& spec) {
  return nlohmann::json{{"total_elements", spec.total_elements},
                        {"experts", spec.experts},
                        {"seed", spec.seed},
                        {"dtype", to_string(spec.dtype)},
                        {"divergence", spec.divergence},
                        {"hot_fraction", spec.hot_fraction}};
}

}  // namespace

Workload gen_workload(const std::filesystem::path& dir, const WorkloadSpec& spec,
                      IoLedger* ledger) {
  if (spec.total_elements == 0) throw InvalidArgument("workload needs at least one element");
  if (spec.experts == 0) throw InvalidArgument("workload needs at least one expert");
  if (!(spec.divergence > 0.0)) throw InvalidArgument("divergence must be > 0");
  if (spec.hot_fraction < 0.0 || spec.hot_fraction > 1.0)
    throw InvalidArgument("hot_fraction must be in [0, 1]");

  std::filesystem::create_directories(dir);
  std::filesystem::path index_path = dir / "workload.json";

  // Same spec in the same dir: reuse the existing family.
  if (std::filesystem::exists(index_path)) {
    std::ifstream in(index_path);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (!j.is_discarded() && j.contains("spec") && j["spec"] == spec_json(spec)) {
      Workload w = load_workload(dir);
      bool all = std::filesystem::exists(w.base_path);
      for (const auto& p : w.expert_paths) all = all && std::filesystem::exists(p);
      if (all) return w;
    }
  }

  // Tensor sizes: fixed proportions of the requested total, remainder on the
  // last tensor. 1/32 units keep the standard 16Mi-element family aligned to
  // every power-of-two block size up to 512Ki elements.
  const auto& plans = tensor_plans();
  uint64_t unit = spec.total_elements / 32;
  std::vector<std::pair<std::string, uint64_t>> sizes;
  if (unit == 0) {
    sizes.emplace_back(plans[0].name, spec.total_elements);
  } else {
    uint64_t assigned = 0;
    for (const TensorPlan& p : plans) {
      sizes.emplace_back(p.name, p.weight * unit);
      assigned += p.weight * unit;
    }
    sizes.back().second += spec.total_elements - assigned;
  }

  const uint32_t k = spec.experts;
  std::vector<TensorInit> base;
  std::vector<uint8_t> raw;
  for (const auto& [name, n] : sizes) {
    TensorInit t;
    t.name = name;
    t.dtype = spec.dtype;
    t.shape = pick_shape(n);
    t.values.resize(n);
    uint64_t td = tensor_digest64(name);
    for (uint64_t j = 0; j < n; ++j)
      t.values[j] = static_cast<float>(gauss(spec.seed, kBaseChannel, td, j));
    if (spec.dtype != DType::kF32) {
      // Experts are offsets from what the base file actually stores, so cold
      // regions stay byte-identical after the storage round trip.
      encode_values(t.values, spec.dtype, raw);
      decode_values(raw, spec.dtype, t.values);
    }
    base.push_back(std::move(t));
  }

  Workload w;
  w.base_id = payload_id(base);
  w.base_path = dir / (w.base_id + ".mpck");
  write_checkpoint(w.base_path, w.base_id, base);
  if (ledger) ledger->charge(IoCat::kOutputWrite, std::filesystem::file_size(w.base_path));

  for (uint32_t i = 0; i < k; ++i) {
    std::vector<TensorInit> expert;
    double scale = spec.divergence * static_cast<double>(i + 1) / static_cast<double>(k);
    for (const TensorInit& bt : base) {
      TensorInit t;
      t.name = bt.name;
      t.dtype = bt.dtype;
      t.shape = bt.shape;
      t.values.resize(bt.values.size());
      uint64_t td = tensor_digest64(bt.name);
      uint64_t n = bt.values.size();
      for (uint64_t r = 0; r * kRegionElements < n; ++r) {
        uint64_t lo = r * kRegionElements;
        uint64_t hi = std::min(n, lo + kRegionElements);
        bool hot = uniform01(hash64(spec.seed, kMaskChannel + i, td, r)) < spec.hot_fraction;
        if (!hot) {
          std::memcpy(t.values.data() + lo, bt.values.data() + lo,
                      (hi - lo) * sizeof(float));
          continue;
        }
        double intensity =
            scale * (0.5 + uniform01(hash64(spec.seed, kScaleChannel + i, td, r)));
        for (uint64_t j = lo; j < hi; ++j) {
          t.values[j] = static_cast<float>(
              static_cast<double>(bt.values[j]) +
              intensity * gauss(spec.seed, kDeltaChannel + i, td, j));
        }
      }
      expert.push_back(std::move(t));
    }
    std::string id = payload_id(expert);
    std::filesystem::path path = dir / (id + ".mpck");
    write_checkpoint(path, id, expert);
    if (ledger) ledger->charge(IoCat::kOutputWrite, std::filesystem::file_size(path));
    w.expert_ids.push_back(id);
    w.expert_paths.push_back(path);
  }

  nlohmann::json index{{"spec", spec_json(spec)},
                       {"base_id", w.base_id},
                       {"base_file", w.base_path.filename().string()},
                       {"expert_ids", w.expert_ids}};
  std::vector<std::string> files;
  for (const auto& p : w.expert_paths) files.push_back(p.filename().string());
  index["expert_files"] = files;
  std::ofstream out(index_path, std::ios::trunc);
  out << index.dump(2) << "\n";
  if (!out) throw IoError("cannot write " + index_path.string());
  return w;
}

Workload load_workload(const std::filesystem::path& dir) {
  std::filesystem::path index_path = dir / "workload.json";
  std::ifstream in(index_path);
  if (!in) throw IoError("no workload.json in " + dir.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw CorruptData("workload.json is not valid JSON");
  try {
    Workload w;
    w.base_id = j.at("base_id").get<std::string>();
    w.base_path = dir / j.at("base_file").get<std::string>();
    w.expert_ids = j.at("expert_ids").get<std::vector<std::string>>();
    for (const auto& f : j.at("expert_files").get<std::vector<std::string>>())
      w.expert_paths.push_back(dir / f);
    if (w.expert_ids.size() != w.expert_paths.size())
      throw CorruptData("workload.json expert lists disagree");
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptData(std::string("workload.json malformed: ") + e.what());
  }
}

}  // namespace mergepipe
