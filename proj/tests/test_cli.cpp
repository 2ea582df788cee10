#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <string>

#include "json.hpp"
#include "mergepipe/metrics.hpp"
#include "support/test_util.hpp"

using testutil::run_proc;

namespace {

std::string bin() { return testutil::mergepipe_bin(); }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(bool(in));
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// gen names files by content-derived model id; the emitted JSON carries the paths
struct GennedFamily {
  std::string base;
  std::vector<std::string> experts;
};

GennedFamily run_gen(const std::string& dir, const std::string& extra_flags) {
  auto gen = run_proc(bin() + " gen --out " + dir + " " + extra_flags);
  REQUIRE(gen.exit_code == 0);
  nlohmann::json j = nlohmann::json::parse(gen.out);
  GennedFamily fam;
  fam.base = j.at("base_file").get<std::string>();
  for (const auto& id : j.at("expert_ids"))
    fam.experts.push_back(dir + "/" + id.get<std::string>() + ".mpck");
  REQUIRE(std::filesystem::exists(fam.base));
  for (const auto& e : fam.experts) REQUIRE(std::filesystem::exists(e));
  return fam;
}

// a small end-to-end fixture: workload, catalog, analysis, plan
struct Pipeline {
  testutil::TempDir tmp;
  std::string cat;
  std::string base;
  std::vector<std::string> experts;
  std::string plan_file;

  Pipeline() {
    cat = (tmp / "store" / "catalog").string();
    GennedFamily fam =
        run_gen((tmp / "workload").string(), "--experts 2 --elements 65536 --seed 7");
    base = fam.base;
    experts = fam.experts;

    REQUIRE(run_proc(bin() + " analyze " + base + " --catalog " + cat +
                     " --block-size 4096").exit_code == 0);
    for (const auto& e : experts)
      REQUIRE(run_proc(bin() + " analyze " + e + " --base " + base + " --catalog " + cat +
                       " --block-size 4096").exit_code == 0);

    plan_file = (tmp / "plan.json").string();
    auto plan = run_proc(bin() + " plan --base " + base + " --experts " + experts[0] + "," +
                         experts[1] + " --budget 0.5 --out " + plan_file + " --catalog " + cat +
                         " --block-size 4096");
    REQUIRE(plan.exit_code == 0);
  }
};

}  // namespace

TEST_CASE("help text exists at every level") {
  CHECK(run_proc(bin() + " --help").exit_code == 0);
  for (const char* sub : {"gen", "analyze", "plan", "merge", "naive", "inspect", "verify",
                          "diff", "cost", "bench"}) {
    auto r = run_proc(bin() + " " + sub + " --help");
    CHECK(r.exit_code == 0);
  }
  for (const char* sub : {"scaling", "budget", "block-size", "stability"}) {
    CHECK(run_proc(bin() + " bench " + std::string(sub) + " --help").exit_code == 0);
  }
}

TEST_CASE("usage errors exit with 1") {
  CHECK(run_proc(bin()).exit_code == 1);                      // a subcommand is required
  CHECK(run_proc(bin() + " frobnicate").exit_code == 1);      // unknown subcommand
  CHECK(run_proc(bin() + " merge").exit_code == 1);           // missing required --plan
  testutil::TempDir tmp;
  GennedFamily fam = run_gen((tmp / "w").string(), "--experts 1 --elements 4096");
  const std::string& base = fam.base;
  const std::string& e0 = fam.experts[0];
  // fractional budgets outside (0, 1] are rejected
  auto r = run_proc(bin() + " plan --base " + base + " --experts " + e0 +
                    " --budget 2.0 --catalog " + (tmp / "c").string());
  CHECK(r.exit_code == 1);
  // delta-form experts need a base to be deltas against
  CHECK(run_proc(bin() + " analyze " + e0 + " --deltas --catalog " + (tmp / "c").string())
            .exit_code == 1);
}

TEST_CASE("io failures exit with 3") {
  testutil::TempDir tmp;
  std::string cat = (tmp / "store" / "catalog").string();
  GennedFamily fam = run_gen((tmp / "w").string(), "--experts 1 --elements 4096");
  REQUIRE(run_proc(bin() + " analyze " + fam.base + " --catalog " + cat).exit_code == 0);
  CHECK(run_proc(bin() + " verify " + std::string(64, '0') + " --catalog " + cat).exit_code == 3);
  CHECK(run_proc(bin() + " inspect missing.mpck --catalog " + cat).exit_code == 3);
  CHECK(run_proc(bin() + " analyze does-not-exist.mpck --catalog " + cat).exit_code == 3);
}

TEST_CASE("the full pipeline runs clean") {
  Pipeline p;
  auto merge = run_proc(bin() + " merge --plan " + p.plan_file + " --catalog " + p.cat +
                        " --metrics-out " + (p.tmp / "merge.csv").string());
  REQUIRE(merge.exit_code == 0);
  nlohmann::json mj = nlohmann::json::parse(merge.out);
  std::string sid = mj.at("sid").get<std::string>();
  REQUIRE(sid.size() == 64);
  CHECK(mj.at("reused") == false);

  // the metrics file leads with the frozen header
  std::string csv = slurp(p.tmp / "merge.csv");
  CHECK(csv.rfind(mergepipe::metrics_csv_header() + "\n", 0) == 0);
  CHECK(csv.find(sid) != std::string::npos);

  CHECK(run_proc(bin() + " verify " + sid + " --catalog " + p.cat).exit_code == 0);

  auto list = run_proc(bin() + " inspect snapshots --catalog " + p.cat);
  CHECK(list.exit_code == 0);
  CHECK(list.out.find(sid) != std::string::npos);

  auto insp = run_proc(bin() + " inspect " + sid + " --catalog " + p.cat);
  CHECK(insp.exit_code == 0);
  CHECK(insp.out.find("block_map") != std::string::npos);

  auto cost = run_proc(bin() + " cost " + p.plan_file + " --catalog " + p.cat);
  CHECK(cost.exit_code == 0);
  nlohmann::json cj = nlohmann::json::parse(cost.out);
  CHECK(cj.at("feasible") == true);
  CHECK(cj.at("c_expert").get<uint64_t>() <= cj.at("budget_B").get<uint64_t>());

  // naive run for a diff partner
  auto naive = run_proc(bin() + " naive --base " + p.base + " --experts " + p.experts[0] + "," +
                        p.experts[1] + " --catalog " + p.cat + " --block-size 4096");
  REQUIRE(naive.exit_code == 0);
  std::string nsid = nlohmann::json::parse(naive.out).at("sid").get<std::string>();

  auto diff = run_proc(bin() + " diff " + sid + " " + nsid + " --catalog " + p.cat +
                       " --block-size 4096");
  CHECK(diff.exit_code == 0);
  nlohmann::json dj = nlohmann::json::parse(diff.out);
  CHECK(dj.at("rel_l2").get<double>() >= 0.0);
  CHECK(dj.at("blocks").get<uint64_t>() > 0);

  // merging again with --reuse returns the committed snapshot
  auto again = run_proc(bin() + " merge --plan " + p.plan_file + " --reuse --catalog " + p.cat);
  CHECK(again.exit_code == 0);
  CHECK(nlohmann::json::parse(again.out).at("reused") == true);
}

TEST_CASE("verification failures exit with 2") {
  Pipeline p;
  auto merge = run_proc(bin() + " merge --plan " + p.plan_file + " --catalog " + p.cat);
  REQUIRE(merge.exit_code == 0);
  std::string sid = nlohmann::json::parse(merge.out).at("sid").get<std::string>();

  auto data = p.tmp / "store" / "snapshots" / sid / "model.mpck";
  std::string bytes = slurp(data);
  bytes[bytes.size() - 1] = char(bytes[bytes.size() - 1] ^ 0x01);
  std::ofstream(data, std::ios::binary | std::ios::trunc) << bytes;

  auto v = run_proc(bin() + " verify " + sid + " --catalog " + p.cat);
  CHECK(v.exit_code == 2);
  CHECK(v.out.find("hash mismatch") != std::string::npos);
}

TEST_CASE("workload generation is idempotent per seed") {
  testutil::TempDir tmp;
  std::string out = (tmp / "w").string();
  GennedFamily a = run_gen(out, "--experts 2 --elements 8192 --seed 5");
  std::string manifest = slurp(tmp / "w" / "workload.json");
  std::string base_bytes = slurp(a.base);
  GennedFamily b = run_gen(out, "--experts 2 --elements 8192 --seed 5");
  CHECK(b.base == a.base);  // ids are content-derived, so the name repeats too
  CHECK(slurp(tmp / "w" / "workload.json") == manifest);
  CHECK(slurp(b.base) == base_bytes);
}

TEST_CASE("a crash at the first commit step leaves nothing visible") {
  Pipeline p;
  auto crash = run_proc("MERGEPIPE_CRASH_AT_STEP=1 " + bin() + " merge --plan " + p.plan_file +
                        " --catalog " + p.cat);
  CHECK(crash.exit_code == 42);
  auto list = run_proc(bin() + " inspect snapshots --catalog " + p.cat);
  CHECK(list.exit_code == 0);
  CHECK(nlohmann::json::parse(list.out).at("snapshots").empty());

  // the interrupted store heals on a clean re-run
  auto merge = run_proc(bin() + " merge --plan " + p.plan_file + " --catalog " + p.cat);
  CHECK(merge.exit_code == 0);
  std::string sid = nlohmann::json::parse(merge.out).at("sid").get<std::string>();
  CHECK(run_proc(bin() + " verify " + sid + " --catalog " + p.cat).exit_code == 0);
}
