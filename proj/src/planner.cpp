#include "mergepipe/planner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <set>

#include "mergepipe/canonical.hpp"
#include "mergepipe/errors.hpp"

namespace mergepipe {

// ---------------------------------------------------------------------------
// MergePlan
// ---------------------------------------------------------------------------

std::string MergePlan::selected_blocks_digest() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& s : selected) arr.push_back({s.expert_idx, s.tensor_id, s.block_idx});
  return canonical_digest(arr);
}

std::string MergePlan::compute_plan_id() const {
  PlanRecord rec = record();
  return rec.compute_plan_id();
}

PlanRecord MergePlan::record() const {
  PlanRecord rec;
  rec.plan_id = plan_id;
  rec.base_id = base_id;
  rec.expert_ids = expert_ids;
  rec.op = op;
  rec.budget_b = budget_b;
  rec.selected_blocks_digest = selected_blocks_digest();
  rec.estimated_expert_cost = estimated_expert_cost;
  return rec;
}

void MergePlan::validate() const {
  record().validate();
  if (expert_ids.size() != expert_paths.size())
    throw CorruptData("plan: expert_ids/expert_paths length mismatch");
  if (block_size_elements == 0) throw CorruptData("plan: zero block size");
  if (estimated_expert_cost > budget_b) throw CorruptData("plan: estimated cost over budget");
  if (order.empty()) throw CorruptData("plan: empty traversal order");
  std::set<std::string> tensors(order.begin(), order.end());
  if (tensors.size() != order.size()) throw CorruptData("plan: duplicate tensor in order");
  uint64_t cost = 0;
  const SelectedBlock* prev = nullptr;
  for (const auto& s : selected) {
    if (s.expert_idx >= expert_ids.size()) throw CorruptData("plan: expert_idx out of range");
    if (!tensors.count(s.tensor_id)) throw CorruptData("plan: selected unknown tensor");
    if (s.bytes == 0) throw CorruptData("plan: zero-byte selection");
    if (prev && !(*prev < s)) throw CorruptData("plan: selection not sorted/unique");
    prev = &s;
    cost += s.bytes;
  }
  if (cost != estimated_expert_cost)
    throw CorruptData("plan: estimated_expert_cost does not match selection");
}

nlohmann::json MergePlan::to_json() const {
  nlohmann::json sel = nlohmann::json::array();
  for (const auto& s : selected)
    sel.push_back({s.expert_idx, s.tensor_id, s.block_idx, s.bytes});
  return nlohmann::json{{"plan_id", plan_id},
                        {"base_id", base_id},
                        {"base_path", base_path},
                        {"expert_ids", expert_ids},
                        {"expert_paths", expert_paths},
                        {"experts_are_deltas", experts_are_deltas},
                        {"op", op.to_json()},
                        {"budget_B", budget_b},
                        {"block_size_elements", block_size_elements},
                        {"order", order},
                        {"selected", sel},
                        {"estimated_expert_cost", estimated_expert_cost},
                        {"fallback_used", fallback_used},
                        {"skipped_candidates", skipped_candidates}};
}

MergePlan MergePlan::from_json(const nlohmann::json& j) {
  MergePlan p;
  p.plan_id = j.at("plan_id").get<std::string>();
  p.base_id = j.at("base_id").get<std::string>();
  p.base_path = j.at("base_path").get<std::string>();
  p.expert_ids = j.at("expert_ids").get<std::vector<std::string>>();
  p.expert_paths = j.at("expert_paths").get<std::vector<std::string>>();
  p.experts_are_deltas = j.at("experts_are_deltas").get<bool>();
  p.op = OperatorSpec::from_json(j.at("op"));
  p.budget_b = j.at("budget_B").get<uint64_t>();
  p.block_size_elements = j.at("block_size_elements").get<uint64_t>();
  p.order = j.at("order").get<std::vector<std::string>>();
  for (const auto& e : j.at("selected")) {
    if (!e.is_array() || e.size() != 4)
      throw CorruptData("plan: selected entry must be [expert_idx, tensor_id, block_idx, bytes]");
    SelectedBlock s;
    s.expert_idx = e[0].get<uint32_t>();
    s.tensor_id = e[1].get<std::string>();
    s.block_idx = e[2].get<uint64_t>();
    s.bytes = e[3].get<uint64_t>();
    p.selected.push_back(std::move(s));
  }
  p.estimated_expert_cost = j.at("estimated_expert_cost").get<uint64_t>();
  p.fallback_used = j.at("fallback_used").get<bool>();
  p.skipped_candidates = j.at("skipped_candidates").get<uint64_t>();
  p.validate();
  return p;
}

void MergePlan::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write plan file " + path.string());
  out << to_json().dump(2) << "\n";
  out.flush();
  if (!out) throw IoError("failed writing plan file " + path.string());
}

MergePlan MergePlan::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read plan file " + path.string());
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw CorruptData("plan file " + path.string() + " is not valid JSON");
  try {
    return from_json(j);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw CorruptData("plan file " + path.string() + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Scoring and selection
// ---------------------------------------------------------------------------

namespace {

void sort_candidates(std::vector<Candidate>& cs) {
  std::sort(cs.begin(), cs.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    return std::tie(a.expert_idx, a.tensor_id, a.block_idx) <
           std::tie(b.expert_idx, b.tensor_id, b.block_idx);
  });
}

}  // namespace

std::optional<std::vector<Candidate>> score_candidates(
    const CheckpointHeader& base, const std::vector<std::string>& expert_ids,
    const Catalog& catalog, uint64_t block_size_elements) {
  std::vector<Candidate> out;
  for (uint32_t i = 0; i < expert_ids.size(); ++i) {
    for (const TensorMeta& tm : base.tensors) {
      uint64_t n = tm.element_count();
      uint64_t nblocks = block_count(n, block_size_elements);
      for (uint64_t b = 0; b < nblocks; ++b) {
        auto rec = catalog.get_block_meta(expert_ids[i], tm.name, b);
        if (!rec || rec->layout != block_size_elements) return std::nullopt;
        if (!rec->sketch.delta_l2 || !rec->sketch.delta_base_id ||
            *rec->sketch.delta_base_id != base.model_id)
          return std::nullopt;
        BlockSpan span = block_span(n, block_size_elements, b);
        if (rec->shape != span.element_count) return std::nullopt;
        Candidate c;
        c.expert_idx = i;
        c.tensor_id = tm.name;
        c.block_idx = b;
        c.size = rec->bytes;
        c.score = *rec->sketch.delta_l2 / std::sqrt(static_cast<double>(rec->shape));
        out.push_back(std::move(c));
      }
    }
  }
  sort_candidates(out);
  return out;
}

std::vector<Candidate> greedy_select(const std::vector<Candidate>& sorted_candidates,
                                     uint64_t budget_b, uint64_t* skipped_out) {
  std::vector<Candidate> selected;
  uint64_t cost = 0;
  uint64_t skipped = 0;
  for (const Candidate& c : sorted_candidates) {
    if (cost + c.size <= budget_b) {
      cost += c.size;
      selected.push_back(c);
    } else {
      ++skipped;
    }
  }
  if (skipped_out) *skipped_out = skipped;
  return selected;
}

// ---------------------------------------------------------------------------
// plan_gen with tensor-level fallback
// ---------------------------------------------------------------------------

namespace {

struct TensorCandidate {
  uint32_t expert_idx;
  std::string tensor_id;
  double norm;
  uint64_t size;
};

// Whole-tensor delta norms, computed from the checkpoints themselves when
// block sketches are unusable. These reads happen at plan time, so they are
// metadata-stage I/O, not budgeted expert reads.
std::vector<TensorCandidate> tensor_candidates(
    const CheckpointReader& base, const std::vector<std::unique_ptr<CheckpointReader>>& experts,
    bool experts_are_deltas, IoLedger* ledger) {
  std::vector<TensorCandidate> out;
  for (uint32_t i = 0; i < experts.size(); ++i) {
    for (size_t t = 0; t < base.tensor_count(); ++t) {
      const TensorMeta& tm = base.tensor(t);
      std::vector<float> ev = experts[i]->read_tensor_f32(t);
      if (ledger) ledger->charge(IoCat::kMetaIo, tm.length_bytes);
      double sumsq = 0.0;
      if (experts_are_deltas) {
        for (float v : ev) sumsq += static_cast<double>(v) * static_cast<double>(v);
      } else {
        std::vector<float> bv = base.read_tensor_f32(t);
        if (ledger) ledger->charge(IoCat::kMetaIo, tm.length_bytes);
        for (size_t j = 0; j < ev.size(); ++j) {
          float d = ev[j] - bv[j];
          sumsq += static_cast<double>(d) * static_cast<double>(d);
        }
      }
      out.push_back({i, tm.name, std::sqrt(sumsq), tm.length_bytes});
    }
  }
  std::sort(out.begin(), out.end(), [](const TensorCandidate& a, const TensorCandidate& b) {
    if (a.norm != b.norm) return a.norm > b.norm;
    return std::tie(a.expert_idx, a.tensor_id) < std::tie(b.expert_idx, b.tensor_id);
  });
  return out;
}

}  // namespace

MergePlan plan_gen(const std::filesystem::path& base_path,
                   const std::vector<std::filesystem::path>& expert_paths,
                   const OperatorSpec& op, uint64_t budget_b, Catalog& catalog,
                   uint64_t block_size_elements, bool experts_are_deltas, IoLedger* ledger) {
  if (expert_paths.empty()) throw InvalidArgument("plan requires at least one expert");
  if (block_size_elements == 0) throw InvalidArgument("block size must be >= 1");
  op.validate();

  CheckpointReader base(base_path);
  if (ledger) ledger->charge(IoCat::kMetaIo, base.header_region_bytes());
  std::vector<std::unique_ptr<CheckpointReader>> experts;
  std::vector<std::string> expert_ids;
  for (const auto& p : expert_paths) {
    experts.push_back(std::make_unique<CheckpointReader>(p));
    if (ledger) ledger->charge(IoCat::kMetaIo, experts.back()->header_region_bytes());
    require_same_structure(base.header(), experts.back()->header());
    expert_ids.push_back(experts.back()->header().model_id);
  }
  {
    std::set<std::string> uniq(expert_ids.begin(), expert_ids.end());
    if (uniq.size() != expert_ids.size() ||
        uniq.count(base.header().model_id))
      throw InvalidArgument("base and expert model ids must be distinct");
  }

  MergePlan plan;
  plan.base_id = base.header().model_id;
  plan.base_path = base_path.string();
  plan.expert_ids = expert_ids;
  for (const auto& p : expert_paths) plan.expert_paths.push_back(p.string());
  plan.experts_are_deltas = experts_are_deltas;
  plan.op = op;
  plan.budget_b = budget_b;
  plan.block_size_elements = block_size_elements;
  for (const TensorMeta& tm : base.header().tensors) plan.order.push_back(tm.name);

  auto candidates = score_candidates(base.header(), expert_ids, catalog, block_size_elements);
  uint64_t cost = 0;
  if (candidates) {
    std::vector<Candidate> picked =
        greedy_select(*candidates, budget_b, &plan.skipped_candidates);
    for (const Candidate& c : picked) {
      plan.selected.push_back({c.expert_idx, c.tensor_id, c.block_idx, c.size});
      cost += c.size;
    }
  } else {
    plan.fallback_used = true;
    auto tcs = tensor_candidates(base, experts, experts_are_deltas, ledger);
    for (const TensorCandidate& tc : tcs) {
      if (cost + tc.size > budget_b) {
        ++plan.skipped_candidates;
        continue;
      }
      cost += tc.size;
      const TensorMeta* tm = base.header().find(tc.tensor_id);
      uint64_t n = tm->element_count();
      uint64_t nblocks = block_count(n, block_size_elements);
      for (uint64_t b = 0; b < nblocks; ++b) {
        BlockSpan span = block_span(n, block_size_elements, b);
        plan.selected.push_back(
            {tc.expert_idx, tc.tensor_id, b, span.element_count * dtype_size(tm->dtype)});
      }
    }
  }
  std::sort(plan.selected.begin(), plan.selected.end());
  plan.estimated_expert_cost = cost;
  plan.plan_id = plan.compute_plan_id();
  plan.validate();
  catalog.put(plan.record());
  return plan;
}

}  // namespace mergepipe
