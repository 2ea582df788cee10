#include "mergepipe/cost_model.hpp"

#include <cmath>
#include <cstdlib>

#include "mergepipe/errors.hpp"

namespace mergepipe {

nlohmann::json CostBreakdown::to_json() const {
  return nlohmann::json{{"c_base", c_base},
                        {"c_expert", c_expert},
                        {"c_out", c_out},
                        {"c_meta", c_meta},
                        {"total", total()}};
}

uint64_t naive_expert_cost(const std::vector<CheckpointHeader>& experts) {
  uint64_t sum = 0;
  for (const auto& h : experts) sum += h.payload_bytes();
  return sum;
}

uint64_t planned_expert_cost(const MergePlan& plan, const Catalog& catalog) {
  uint64_t sum = 0;
  for (const SelectedBlock& s : plan.selected) {
    auto rec = catalog.get_block_meta(plan.expert_ids.at(s.expert_idx), s.tensor_id, s.block_idx);
    if (!rec)
      throw CorruptData("missing block meta for " + plan.expert_ids.at(s.expert_idx) + "/" +
                        s.tensor_id + "/" + std::to_string(s.block_idx));
    sum += rec->bytes;
  }
  return sum;
}

uint64_t default_meta_estimate(uint64_t c_base) { return c_base / 100 + (64ull << 10); }

CostBreakdown estimate_total(const MergePlan& plan, const CheckpointHeader& base,
                             uint64_t meta_estimate) {
  CostBreakdown c;
  c.c_base = base.payload_bytes();
  c.c_out = c.c_base;  // output preserves the base tensor structure
  c.c_expert = plan.estimated_expert_cost;
  c.c_meta = meta_estimate;
  return c;
}

uint64_t parse_budget(const std::string& text, uint64_t naive_cost) {
  if (text.empty()) throw InvalidArgument("empty budget");
  if (text.find('.') != std::string::npos) {
    size_t used = 0;
    double frac;
    try {
      frac = std::stod(text, &used);
    } catch (const std::exception&) {
      throw InvalidArgument("bad budget '" + text + "'");
    }
    if (used != text.size()) throw InvalidArgument("bad budget '" + text + "'");
    if (!(frac > 0.0 && frac <= 1.0))
      throw InvalidArgument("fractional budget must be in (0, 1], got '" + text + "'");
    return static_cast<uint64_t>(std::floor(frac * static_cast<double>(naive_cost)));
  }
  // stoull accepts and wraps a leading sign; a budget is a plain magnitude
  if (text[0] < '0' || text[0] > '9') throw InvalidArgument("bad budget '" + text + "'");
  size_t used = 0;
  uint64_t value;
  try {
    value = std::stoull(text, &used);
  } catch (const std::exception&) {
    throw InvalidArgument("bad budget '" + text + "'");
  }
  std::string suffix = text.substr(used);
  uint64_t mult;
  if (suffix.empty() || suffix == "B") {
    mult = 1;
  } else if (suffix == "KiB") {
    mult = 1ull << 10;
  } else if (suffix == "MiB") {
    mult = 1ull << 20;
  } else if (suffix == "GiB") {
    mult = 1ull << 30;
  } else {
    throw InvalidArgument("bad budget suffix '" + suffix + "' (use B/KiB/MiB/GiB)");
  }
  if (mult != 1 && value > UINT64_MAX / mult) throw InvalidArgument("budget overflows");
  return value * mult;
}

}  // namespace mergepipe
