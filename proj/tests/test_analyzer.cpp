#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "mergepipe/analyzer.hpp"
#include "mergepipe/catalog.hpp"
#include "mergepipe/errors.hpp"
#include "support/ref_sha256.hpp"
#include "support/test_util.hpp"

using namespace mergepipe;

TEST_CASE("intrinsic sketch values are exact on a hand-traced block") {
  testutil::TempDir tmp;
  std::vector<TensorInit> tensors;
  tensors.push_back({"t", DType::kF32, {2}, {3.0f, -4.0f}});
  tensors.push_back({"z", DType::kF32, {1}, {0.0f}});
  auto path = testutil::write_model(tmp.path(), "m", tensors);

  Catalog cat(tmp / "catalog");
  CHECK(analyze_model(path, cat, 2) == 2);

  auto rec = cat.get_block_meta("m", "t", 0);
  REQUIRE(rec.has_value());
  CHECK(rec->sketch.l2_norm == 5.0);
  CHECK(rec->sketch.max_abs == 4.0);
  CHECK(rec->sketch.sign_pos_count == 1);  // zero and negatives do not count
  CHECK(rec->shape == 2);
  CHECK(rec->bytes == 8);
  CHECK(!rec->sketch.delta_l2.has_value());

  auto zero = cat.get_block_meta("m", "z", 0);
  REQUIRE(zero.has_value());
  CHECK(zero->sketch.l2_norm == 0.0);
  CHECK(zero->sketch.max_abs == 0.0);
  CHECK(zero->sketch.sign_pos_count == 0);
}

TEST_CASE("block partitioning, hashes, and payload accounting") {
  testutil::TempDir tmp;
  std::mt19937_64 rng(7);
  auto v10 = testutil::random_values(rng, 10, 1.0f);
  auto v8 = testutil::random_values(rng, 8, 2.0f);
  std::vector<TensorInit> tensors;
  tensors.push_back({"a", DType::kF32, {10}, v10});
  tensors.push_back({"b", DType::kF32, {2, 4}, v8});
  auto path = testutil::write_model(tmp.path(), "m", tensors);

  Catalog cat(tmp / "catalog");
  CHECK(analyze_model(path, cat, 4) == 5);  // blocks: 4,4,2 + 4,4

  auto recs = cat.block_meta_range("m", "a");
  REQUIRE(recs.size() == 3);
  CHECK(recs[0].shape == 4);
  CHECK(recs[1].shape == 4);
  CHECK(recs[2].shape == 2);
  CHECK(recs[2].bytes == 8);
  CHECK(recs[2].layout == 4);

  // the stored hash is the sha256 of the raw little-endian block bytes
  std::vector<uint8_t> raw;
  encode_values(std::span<const float>(v10.data() + 8, 2), DType::kF32, raw);
  CHECK(recs[2].hash == ref::sha256_hex(std::string(raw.begin(), raw.end())));
}

TEST_CASE("re-analysis is a fixed point and preserves delta sketches") {
  testutil::TempDir tmp;
  std::mt19937_64 rng(11);
  std::vector<TensorInit> base_t, exp_t;
  auto bv = testutil::random_values(rng, 12, 1.0f);
  auto ev = testutil::random_values(rng, 12, 1.0f);
  base_t.push_back({"t", DType::kF32, {12}, bv});
  exp_t.push_back({"t", DType::kF32, {12}, ev});
  auto base = testutil::write_model(tmp.path(), "base", base_t);
  auto expert = testutil::write_model(tmp.path(), "e0", exp_t);

  Catalog cat(tmp / "catalog");
  CHECK(analyze_model(base, cat, 4) == 3);
  CHECK(analyze_model(expert, cat, 4) == 3);
  CHECK(analyze_delta(expert, base, cat, 4) == 3);

  uint64_t appended = cat.bytes_appended();
  CHECK(analyze_model(base, cat, 4) == 0);
  CHECK(analyze_model(expert, cat, 4) == 0);
  CHECK(analyze_delta(expert, base, cat, 4) == 0);
  CHECK(cat.bytes_appended() == appended);

  auto rec = cat.get_block_meta("e0", "t", 1);
  REQUIRE(rec.has_value());
  REQUIRE(rec->sketch.delta_l2.has_value());
  CHECK(*rec->sketch.delta_base_id == "base");

  // deltas are formed in f32 compute precision; same order, bitwise equal
  double sumsq = 0.0;
  for (size_t j = 4; j < 8; ++j) {
    float d = ev[j] - bv[j];
    sumsq += double(d) * double(d);
  }
  CHECK(*rec->sketch.delta_l2 == std::sqrt(sumsq));
}

TEST_CASE("norms satisfy the pythagorean split against raw values") {
  // || e - b ||^2 summed per block equals the whole-tensor difference norm
  testutil::TempDir tmp;
  std::mt19937_64 rng(13);
  auto bv = testutil::random_values(rng, 1000, 1.0f);
  auto ev = testutil::random_values(rng, 1000, 1.0f);
  std::vector<TensorInit> base_t{{"t", DType::kF32, {1000}, bv}};
  std::vector<TensorInit> exp_t{{"t", DType::kF32, {1000}, ev}};
  auto base = testutil::write_model(tmp.path(), "base", base_t);
  auto expert = testutil::write_model(tmp.path(), "e0", exp_t);

  Catalog cat(tmp / "catalog");
  analyze_delta(expert, base, cat, 64, /*expert_is_delta=*/false);

  double total = 0.0;
  for (const auto& rec : cat.block_meta_range("e0", "t")) {
    REQUIRE(rec.sketch.delta_l2.has_value());
    total += *rec.sketch.delta_l2 * *rec.sketch.delta_l2;
  }
  double expect = 0.0;
  for (size_t j = 0; j < bv.size(); ++j) {
    float d = ev[j] - bv[j];  // f32 compute precision
    expect += double(d) * double(d);
  }
  CHECK(std::sqrt(total) == doctest::Approx(std::sqrt(expect)).epsilon(1e-9));
}

TEST_CASE("delta-stored experts use the implicit zero base") {
  testutil::TempDir tmp;
  std::mt19937_64 rng(17);
  auto dv = testutil::random_values(rng, 96, 0.5f);
  std::vector<TensorInit> base_t{{"t", DType::kF32, {96}, std::vector<float>(96, 0.25f)}};
  std::vector<TensorInit> exp_t{{"t", DType::kF32, {96}, dv}};
  auto base = testutil::write_model(tmp.path(), "base", base_t);
  auto expert = testutil::write_model(tmp.path(), "d0", exp_t);

  Catalog cat(tmp / "catalog");
  analyze_delta(expert, base, cat, 32, /*expert_is_delta=*/true);
  for (const auto& rec : cat.block_meta_range("d0", "t")) {
    REQUIRE(rec.sketch.delta_l2.has_value());
    // same accumulation order as the intrinsic norm: bitwise equal
    CHECK(*rec.sketch.delta_l2 == rec.sketch.l2_norm);
  }
}

TEST_CASE("analysis reads are metadata, never merge traffic") {
  testutil::TempDir tmp;
  std::mt19937_64 rng(19);
  std::vector<TensorInit> base_t{{"t", DType::kF32, {64}, testutil::random_values(rng, 64, 1.0f)}};
  std::vector<TensorInit> exp_t{{"t", DType::kF32, {64}, testutil::random_values(rng, 64, 1.0f)}};
  auto base = testutil::write_model(tmp.path(), "base", base_t);
  auto expert = testutil::write_model(tmp.path(), "e0", exp_t);

  IoLedger ledger;
  Catalog cat(tmp / "catalog", Catalog::Mode::kReadWrite, &ledger);
  analyze_model(base, cat, 16, &ledger);
  analyze_delta(expert, base, cat, 16, false, &ledger);
  CHECK(ledger.bytes(IoCat::kMetaIo) > 0);
  CHECK(ledger.bytes(IoCat::kBaseRead) == 0);
  CHECK(ledger.bytes(IoCat::kExpertRead) == 0);
  CHECK(ledger.bytes(IoCat::kOutputWrite) == 0);
}

TEST_CASE("analysis rejects bad inputs") {
  testutil::TempDir tmp;
  std::vector<TensorInit> a{{"t", DType::kF32, {4}, {1, 2, 3, 4}}};
  std::vector<TensorInit> b{{"t", DType::kF32, {5}, {1, 2, 3, 4, 5}}};
  auto pa = testutil::write_model(tmp.path(), "a", a);
  auto pb = testutil::write_model(tmp.path(), "b", b);

  Catalog cat(tmp / "catalog");
  CHECK_THROWS_AS(analyze_model(pa, cat, 0), InvalidArgument);
  CHECK_THROWS_AS(analyze_delta(pb, pa, cat, 4), ShapeMismatch);
}

TEST_CASE("re-analysis at a new block layout rewrites records") {
  testutil::TempDir tmp;
  std::mt19937_64 rng(23);
  std::vector<TensorInit> a{{"t", DType::kF32, {8}, testutil::random_values(rng, 8, 1.0f)}};
  auto pa = testutil::write_model(tmp.path(), "m", a);

  Catalog cat(tmp / "catalog");
  CHECK(analyze_model(pa, cat, 8) == 1);
  CHECK(analyze_model(pa, cat, 2) == 4);
  CHECK(cat.get_block_meta("m", "t", 0)->layout == 2);
  CHECK(cat.get_block_meta("m", "t", 3)->shape == 2);
}
