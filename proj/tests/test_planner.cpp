#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <chrono>
#include <cmath>
#include <random>
#include <vector>

#include "mergepipe/analyzer.hpp"
#include "mergepipe/cost_model.hpp"
#include "mergepipe/errors.hpp"
#include "mergepipe/planner.hpp"
#include "support/test_util.hpp"

using namespace mergepipe;

namespace {

Candidate cand(uint32_t e, const std::string& t, uint64_t b, double score, uint64_t size) {
  Candidate c;
  c.expert_idx = e;
  c.tensor_id = t;
  c.block_idx = b;
  c.score = score;
  c.size = size;
  return c;
}

BlockMetaRecord sketch_rec(const std::string& model, const std::string& tensor, uint64_t idx,
                           uint64_t elements, double delta_l2, const std::string& base_id,
                           uint64_t layout) {
  BlockMetaRecord r;
  r.model_id = model;
  r.tensor_id = tensor;
  r.block_idx = idx;
  r.shape = elements;
  r.dtype = DType::kF32;
  r.bytes = elements * 4;
  r.hash = std::string(64, 'a');
  r.sketch.l2_norm = 0.0;
  r.sketch.max_abs = 0.0;
  r.sketch.delta_l2 = delta_l2;
  r.sketch.delta_base_id = base_id;
  r.layout = layout;
  return r;
}

struct Family {
  std::filesystem::path base;
  std::vector<std::filesystem::path> experts;
};

// base plus two experts over two tensors; expert payload is 48 bytes each
Family make_family(const std::filesystem::path& dir, std::mt19937_64& rng) {
  Family f;
  auto ba = testutil::random_values(rng, 8, 1.0f);
  auto bb = testutil::random_values(rng, 4, 1.0f);
  std::vector<TensorInit> bt{{"a", DType::kF32, {8}, ba}, {"b", DType::kF32, {4}, bb}};
  f.base = testutil::write_model(dir, "base", bt);
  for (int i = 0; i < 2; ++i) {
    auto ea = testutil::random_values(rng, 8, 1.0f);
    auto eb = testutil::random_values(rng, 4, 1.0f);
    std::vector<TensorInit> et{{"a", DType::kF32, {8}, ea}, {"b", DType::kF32, {4}, eb}};
    f.experts.push_back(testutil::write_model(dir, "e" + std::to_string(i), et));
  }
  return f;
}

}  // namespace

TEST_CASE("greedy selection skips what no longer fits") {
  std::vector<Candidate> cs{cand(0, "t", 0, 3.0, 10), cand(0, "t", 1, 2.0, 25),
                            cand(0, "t", 2, 1.0, 5)};
  uint64_t skipped = 0;
  auto sel = greedy_select(cs, 15, &skipped);
  REQUIRE(sel.size() == 2);
  CHECK(sel[0].block_idx == 0);
  CHECK(sel[1].block_idx == 2);  // the 25-byte block did not fit, the 5-byte one did
  CHECK(skipped == 1);

  sel = greedy_select(cs, 0, &skipped);
  CHECK(sel.empty());
  CHECK(skipped == 3);

  sel = greedy_select(cs, 40, &skipped);
  CHECK(sel.size() == 3);
  CHECK(skipped == 0);
}

TEST_CASE("greedy selection is budget-sound and maximal on random inputs") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<Candidate> cs;
    size_t n = 1 + rng() % 40;
    uint64_t total = 0;
    for (size_t i = 0; i < n; ++i) {
      uint64_t size = 1 + rng() % 100;
      total += size;
      cs.push_back(cand(uint32_t(rng() % 3), "t" + std::to_string(rng() % 2), i,
                        double(rng() % 1000) / 100.0, size));
    }
    std::sort(cs.begin(), cs.end(), [](const Candidate& a, const Candidate& b) {
      return a.score > b.score;
    });
    uint64_t budget = rng() % (total + total / 5 + 1);
    uint64_t skipped = 0;
    auto sel = greedy_select(cs, budget, &skipped);

    uint64_t cost = 0;
    for (const auto& s : sel) cost += s.size;
    CHECK(cost <= budget);
    CHECK(sel.size() + skipped == cs.size());

    // replay the scan: every decision must match the running-cost rule
    uint64_t replay_cost = 0;
    size_t si = 0;
    for (const auto& c : cs) {
      bool admitted = si < sel.size() && sel[si].block_idx == c.block_idx &&
                      sel[si].expert_idx == c.expert_idx && sel[si].tensor_id == c.tensor_id;
      if (replay_cost + c.size <= budget) {
        CHECK(admitted);
        replay_cost += c.size;
        ++si;
      } else {
        CHECK(!admitted);
      }
    }
  }
}

TEST_CASE("candidate scoring sorts by score then ascending identity") {
  testutil::TempDir tmp;
  Catalog cat(tmp / "catalog");
  CheckpointHeader base;
  base.model_id = "base";
  base.tensors.push_back({"t", DType::kF32, {8}, 0, 32});

  cat.put(sketch_rec("e0", "t", 0, 4, 4.0, "base", 4));  // score 2
  cat.put(sketch_rec("e0", "t", 1, 4, 2.0, "base", 4));  // score 1
  cat.put(sketch_rec("e1", "t", 0, 4, 4.0, "base", 4));  // score 2, tie with e0/t/0
  cat.put(sketch_rec("e1", "t", 1, 4, 6.0, "base", 4));  // score 3

  auto cs = score_candidates(base, {"e0", "e1"}, cat, 4);
  REQUIRE(cs.has_value());
  REQUIRE(cs->size() == 4);
  CHECK((*cs)[0].expert_idx == 1);
  CHECK((*cs)[0].block_idx == 1);
  CHECK((*cs)[0].score == 3.0);
  CHECK((*cs)[1].expert_idx == 0);  // tie resolved toward the lower expert
  CHECK((*cs)[1].block_idx == 0);
  CHECK((*cs)[2].expert_idx == 1);
  CHECK((*cs)[2].block_idx == 0);
  CHECK((*cs)[3].score == 1.0);

  // any unusable record routes the whole scoring pass to the fallback
  CHECK(!score_candidates(base, {"e0", "e2"}, cat, 4).has_value());  // missing expert
  CHECK(!score_candidates(base, {"e0", "e1"}, cat, 8).has_value());  // other layout
  auto plain = sketch_rec("e3", "t", 0, 4, 1.0, "base", 4);
  plain.sketch.delta_l2.reset();
  plain.sketch.delta_base_id.reset();
  cat.put(plain);
  cat.put(sketch_rec("e3", "t", 1, 4, 1.0, "base", 4));
  CHECK(!score_candidates(base, {"e3"}, cat, 4).has_value());  // no delta sketch
  cat.put(sketch_rec("e4", "t", 0, 4, 1.0, "other", 4));
  cat.put(sketch_rec("e4", "t", 1, 4, 1.0, "other", 4));
  CHECK(!score_candidates(base, {"e4"}, cat, 4).has_value());  // wrong base
}

TEST_CASE("plans from analyzed sketches are feasible, persisted, deterministic") {
  testutil::TempDir tmp;
  std::mt19937_64 rng(31);
  auto fam = make_family(tmp.path(), rng);

  Catalog cat(tmp / "catalog");
  analyze_model(fam.base, cat, 4);
  for (const auto& e : fam.experts) analyze_delta(e, fam.base, cat, 4);

  OperatorSpec op;
  const uint64_t naive = 96;  // 2 experts x 48 payload bytes
  for (uint64_t budget : {0ull, 20ull, 48ull, 96ull, 1000ull}) {
    MergePlan plan = plan_gen(fam.base, fam.experts, op, budget, cat, 4);
    CHECK(plan.estimated_expert_cost <= budget);
    CHECK(!plan.fallback_used);
    CHECK_NOTHROW(plan.validate());
    CHECK(planned_expert_cost(plan, cat) == plan.estimated_expert_cost);
    CHECK(plan.selected.size() + plan.skipped_candidates == 6);  // 2 experts x 3 blocks
    CHECK(cat.get_plan(plan.plan_id).has_value());
    if (budget >= naive) {
      // zero-score blocks are still candidates: the full budget takes all
      CHECK(plan.estimated_expert_cost == naive);
      CHECK(plan.skipped_candidates == 0);
    }
  }

  auto p1 = plan_gen(fam.base, fam.experts, op, 48, cat, 4);
  auto p2 = plan_gen(fam.base, fam.experts, op, 48, cat, 4);
  CHECK(p1.plan_id == p2.plan_id);
  CHECK(p1.selected_blocks_digest() == p2.selected_blocks_digest());
}

TEST_CASE("identical experts keep zero scores but full budgets select everything") {
  testutil::TempDir tmp;
  std::mt19937_64 rng(37);
  auto bv = testutil::random_values(rng, 8, 1.0f);
  std::vector<TensorInit> bt{{"t", DType::kF32, {8}, bv}};
  auto base = testutil::write_model(tmp.path(), "base", bt);
  std::vector<TensorInit> et{{"t", DType::kF32, {8}, bv}};  // no divergence at all
  auto expert = testutil::write_model(tmp.path(), "e0", et);

  Catalog cat(tmp / "catalog");
  analyze_model(base, cat, 4);
  analyze_delta(expert, base, cat, 4);

  MergePlan plan = plan_gen(base, {expert}, OperatorSpec{}, 32, cat, 4);
  CHECK(plan.selected.size() == 2);
  CHECK(plan.estimated_expert_cost == 32);
  CHECK(plan.skipped_candidates == 0);
}

TEST_CASE("missing sketches fall back to tensor-level norms") {
  testutil::TempDir tmp;
  std::vector<TensorInit> bt{{"a", DType::kF32, {8}, std::vector<float>(8, 0.0f)},
                             {"b", DType::kF32, {4}, std::vector<float>(4, 0.0f)}};
  auto base = testutil::write_model(tmp.path(), "base", bt);
  // delta norms: a -> sqrt(8), b -> sqrt(16) = 4; b ranks first despite 16 bytes
  std::vector<TensorInit> et{{"a", DType::kF32, {8}, std::vector<float>(8, 1.0f)},
                             {"b", DType::kF32, {4}, std::vector<float>(4, 2.0f)}};
  auto expert = testutil::write_model(tmp.path(), "e0", et);

  Catalog cat(tmp / "catalog");  // nothing analyzed
  IoLedger ledger;
  MergePlan plan = plan_gen(base, {expert}, OperatorSpec{}, 16, cat, 4, false, &ledger);
  CHECK(plan.fallback_used);
  CHECK(plan.estimated_expert_cost == 16);
  CHECK(plan.skipped_candidates == 1);  // tensor a no longer fit
  REQUIRE(plan.selected.size() == 1);
  CHECK(plan.selected[0].tensor_id == "b");
  CHECK(ledger.bytes(IoCat::kMetaIo) > 0);  // fallback reads are plan-time metadata
  CHECK(ledger.bytes(IoCat::kExpertRead) == 0);

  // a fallback tensor admits all of its blocks
  MergePlan full = plan_gen(base, {expert}, OperatorSpec{}, 48, cat, 4);
  CHECK(full.fallback_used);
  CHECK(full.selected.size() == 3);
  CHECK(full.estimated_expert_cost == 48);
}

TEST_CASE("fallback ties resolve toward the lower expert index") {
  testutil::TempDir tmp;
  std::vector<TensorInit> bt{{"t", DType::kF32, {4}, std::vector<float>(4, 0.0f)}};
  auto base = testutil::write_model(tmp.path(), "base", bt);
  std::vector<TensorInit> et{{"t", DType::kF32, {4}, std::vector<float>(4, 1.0f)}};
  auto e0 = testutil::write_model(tmp.path(), "e0", et);
  auto e1 = testutil::write_model(tmp.path(), "e1", et);  // same payload, same norm

  Catalog cat(tmp / "catalog");
  MergePlan plan = plan_gen(base, {e0, e1}, OperatorSpec{}, 16, cat, 4);
  REQUIRE(plan.selected.size() == 1);
  CHECK(plan.selected[0].expert_idx == 0);
}

TEST_CASE("a stale block layout routes to the fallback") {
  testutil::TempDir tmp;
  std::mt19937_64 rng(41);
  auto fam = make_family(tmp.path(), rng);
  Catalog cat(tmp / "catalog");
  analyze_model(fam.base, cat, 4);
  for (const auto& e : fam.experts) analyze_delta(e, fam.base, cat, 4);

  CHECK(!plan_gen(fam.base, fam.experts, OperatorSpec{}, 96, cat, 4).fallback_used);
  CHECK(plan_gen(fam.base, fam.experts, OperatorSpec{}, 96, cat, 2).fallback_used);
}

TEST_CASE("plan generation rejects bad input combinations") {
  testutil::TempDir tmp;
  std::mt19937_64 rng(43);
  auto fam = make_family(tmp.path(), rng);
  Catalog cat(tmp / "catalog");

  CHECK_THROWS_AS(plan_gen(fam.base, {}, OperatorSpec{}, 10, cat, 4), InvalidArgument);
  CHECK_THROWS_AS(plan_gen(fam.base, fam.experts, OperatorSpec{}, 10, cat, 0), InvalidArgument);
  CHECK_THROWS_AS(plan_gen(fam.base, {fam.base}, OperatorSpec{}, 10, cat, 4), InvalidArgument);
  CHECK_THROWS_AS(plan_gen(fam.base, {fam.experts[0], fam.experts[0]}, OperatorSpec{}, 10, cat, 4),
                  InvalidArgument);

  OperatorSpec bad;
  bad.lambda = 3.0;
  CHECK_THROWS_AS(plan_gen(fam.base, fam.experts, bad, 10, cat, 4), InvalidArgument);

  std::vector<TensorInit> renamed{{"x", DType::kF32, {2}, {1.0f, 2.0f}}};
  auto stranger = testutil::write_model(tmp.path(), "stranger", renamed);
  CHECK_THROWS_AS(plan_gen(fam.base, {stranger}, OperatorSpec{}, 10, cat, 4), MissingTensor);

  std::vector<TensorInit> reshaped{{"a", DType::kF32, {4}, {1, 2, 3, 4}},
                                   {"b", DType::kF32, {4}, {1, 2, 3, 4}}};
  auto bent = testutil::write_model(tmp.path(), "bent", reshaped);
  CHECK_THROWS_AS(plan_gen(fam.base, {bent}, OperatorSpec{}, 10, cat, 4), ShapeMismatch);
}

TEST_CASE("plans survive a file round trip and reject tampering") {
  testutil::TempDir tmp;
  std::mt19937_64 rng(47);
  auto fam = make_family(tmp.path(), rng);
  Catalog cat(tmp / "catalog");
  analyze_model(fam.base, cat, 4);
  for (const auto& e : fam.experts) analyze_delta(e, fam.base, cat, 4);

  MergePlan plan = plan_gen(fam.base, fam.experts, OperatorSpec{}, 48, cat, 4);
  auto file = tmp / "plan.json";
  plan.save(file);
  MergePlan back = MergePlan::load(file);
  CHECK(back.plan_id == plan.plan_id);
  CHECK(back.estimated_expert_cost == plan.estimated_expert_cost);
  CHECK(back.selected.size() == plan.selected.size());
  CHECK(back.order == plan.order);

  auto j = plan.to_json();
  j["budget_B"] = j["budget_B"].get<uint64_t>() + 1;  // plan_id now stale
  std::ofstream(file) << j.dump(2);
  CHECK_THROWS_AS(MergePlan::load(file), CorruptData);

  j = plan.to_json();
  j["estimated_expert_cost"] = plan.budget_b + 1;  // infeasible and stale
  std::ofstream(file) << j.dump(2);
  CHECK_THROWS_AS(MergePlan::load(file), CorruptData);

  std::ofstream(file) << "not json";
  CHECK_THROWS_AS(MergePlan::load(file), CorruptData);
  CHECK_THROWS_AS(MergePlan::load(tmp / "absent.json"), IoError);
}

TEST_CASE("selection cost stays linear in the candidate count") {
  auto run = [](size_t n) {
    std::vector<Candidate> cs;
    cs.reserve(n);
    std::mt19937_64 rng(53);
    for (size_t i = 0; i < n; ++i)
      cs.push_back(cand(uint32_t(i % 7), "t", i, double(n - i), 1 + rng() % 64));
    auto start = std::chrono::steady_clock::now();
    uint64_t skipped = 0;
    auto sel = greedy_select(cs, n * 16, &skipped);
    auto elapsed = std::chrono::steady_clock::now() - start;
    CHECK(!sel.empty());
    return std::chrono::duration<double>(elapsed).count();
  };
  double small = run(100000);
  double big = run(1000000);
  CHECK(big < 2.0);  // a linear scan of a million candidates is cheap
  if (small > 1e-4) CHECK(big / small < 15.0);
}
