#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>
#include <vector>

#include "mergepipe/analyzer.hpp"
#include "mergepipe/cost_model.hpp"
#include "mergepipe/errors.hpp"
#include "support/test_util.hpp"

using namespace mergepipe;

namespace {

CheckpointHeader header_with_payload(const std::string& id, uint64_t bytes) {
  CheckpointHeader h;
  h.model_id = id;
  h.tensors.push_back({"t", DType::kF32, {bytes / 4}, 0, bytes});
  return h;
}

}  // namespace

TEST_CASE("naive cost is the sum of expert payloads") {
  std::vector<CheckpointHeader> experts;
  experts.push_back(header_with_payload("a", 100));
  experts.push_back(header_with_payload("b", 200));
  experts.push_back(header_with_payload("c", 300));
  CHECK(naive_expert_cost(experts) == 600);
  CHECK(naive_expert_cost({}) == 0);
}

TEST_CASE("planned cost resolves selected blocks through the catalog") {
  testutil::TempDir tmp;
  std::mt19937_64 rng(3);
  std::vector<TensorInit> bt{{"t", DType::kF32, {12}, testutil::random_values(rng, 12, 1.0f)}};
  std::vector<TensorInit> et{{"t", DType::kF32, {12}, testutil::random_values(rng, 12, 1.0f)}};
  auto base = testutil::write_model(tmp.path(), "base", bt);
  auto expert = testutil::write_model(tmp.path(), "e0", et);

  Catalog cat(tmp / "catalog");
  analyze_model(base, cat, 4);
  analyze_delta(expert, base, cat, 4);

  MergePlan plan;
  plan.base_id = "base";
  plan.expert_ids = {"e0"};
  plan.selected.push_back({0, "t", 0, 16});
  plan.selected.push_back({0, "t", 2, 16});
  CHECK(planned_expert_cost(plan, cat) == 32);

  // all blocks selected equals the naive expert scan
  plan.selected = {{0, "t", 0, 16}, {0, "t", 1, 16}, {0, "t", 2, 16}};
  CheckpointReader er(expert);
  CHECK(planned_expert_cost(plan, cat) == naive_expert_cost({er.header()}));

  plan.selected.push_back({0, "t", 9, 16});  // never analyzed
  CHECK_THROWS_AS(planned_expert_cost(plan, cat), CorruptData);
}

TEST_CASE("total estimate decomposes into the four charged terms") {
  CheckpointHeader base = header_with_payload("base", 4096);
  MergePlan plan;
  plan.estimated_expert_cost = 1000;
  auto c = estimate_total(plan, base, default_meta_estimate(4096));
  CHECK(c.c_base == 4096);
  CHECK(c.c_out == 4096);  // output mirrors the base structure
  CHECK(c.c_expert == 1000);
  CHECK(c.c_meta == 4096 / 100 + (64ull << 10));
  CHECK(c.total() == c.c_base + c.c_expert + c.c_out + c.c_meta);

  auto j = c.to_json();
  CHECK(j["total"] == c.total());
}

TEST_CASE("feasibility is a closed inequality against the budget") {
  CHECK(is_feasible(0, 0));
  CHECK(is_feasible(100, 100));
  CHECK(!is_feasible(101, 100));
}

TEST_CASE("budget text parses as fraction or byte count") {
  const uint64_t naive = 1000;
  CHECK(parse_budget("0.5", naive) == 500);
  CHECK(parse_budget("1.0", naive) == 1000);
  CHECK(parse_budget("0.333", naive) == 333);  // floor
  CHECK(parse_budget("0.0001", naive) == 0);
  CHECK(parse_budget("123", naive) == 123);
  CHECK(parse_budget("123B", naive) == 123);
  CHECK(parse_budget("10KiB", naive) == 10240);
  CHECK(parse_budget("512MiB", naive) == 512ull << 20);
  CHECK(parse_budget("2GiB", naive) == 2ull << 30);
  // integers larger than naive are fine: absolute budgets are not clamped
  CHECK(parse_budget("5000", naive) == 5000);

  CHECK_THROWS_AS(parse_budget("", naive), InvalidArgument);
  CHECK_THROWS_AS(parse_budget("0.0", naive), InvalidArgument);
  CHECK_THROWS_AS(parse_budget("1.5", naive), InvalidArgument);
  CHECK_THROWS_AS(parse_budget("-0.5", naive), InvalidArgument);
  CHECK_THROWS_AS(parse_budget("abc", naive), InvalidArgument);
  CHECK_THROWS_AS(parse_budget("-5", naive), InvalidArgument);
  CHECK_THROWS_AS(parse_budget("10kb", naive), InvalidArgument);
  CHECK_THROWS_AS(parse_budget("1.0.0", naive), InvalidArgument);
  CHECK_THROWS_AS(parse_budget("12MiBx", naive), InvalidArgument);
}

TEST_CASE("meta estimate keeps its floor on tiny models") {
  CHECK(default_meta_estimate(0) == 64ull << 10);
  CHECK(default_meta_estimate(100) == 1 + (64ull << 10));
  CHECK(default_meta_estimate(1ull << 30) == (1ull << 30) / 100 + (64ull << 10));
}
