// mergepipe: budgeted block-level model merging over MPCK checkpoints.
//
// Exit codes: 0 ok, 1 usage, 2 verification failure, 3 I/O or corrupt data.

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mergepipe/analyzer.hpp"
#include "mergepipe/bench.hpp"
#include "mergepipe/catalog.hpp"
#include "mergepipe/checkpoint.hpp"
#include "mergepipe/cost_model.hpp"
#include "mergepipe/engine.hpp"
#include "mergepipe/errors.hpp"
#include "mergepipe/metrics.hpp"
#include "mergepipe/planner.hpp"
#include "mergepipe/workload.hpp"

namespace mp = mergepipe;

namespace {

struct GlobalOpts {
  std::string catalog_dir = "store/catalog";
  uint64_t block_size = mp::kDefaultBlockElements;
  std::string metrics_out;
  uint64_t seed = 42;
};

struct OpFlags {
  std::string op = "avg";
  double lambda = 1.0;
  double density = 0.2;
  double drop_p = 0.9;
};

void add_op_flags(CLI::App* cmd, OpFlags& f) {
  cmd->add_option("--op", f.op, "merge operator: avg|ties|dare")->capture_default_str();
  cmd->add_option("--lambda", f.lambda, "merge strength")->capture_default_str();
  cmd->add_option("--density", f.density, "ties: fraction of kept coordinates")
      ->capture_default_str();
  cmd->add_option("--drop-p", f.drop_p, "dare: drop probability")->capture_default_str();
}

mp::OperatorSpec make_op(const OpFlags& f, uint64_t seed) {
  mp::OperatorSpec spec;
  spec.kind = mp::op_kind_from_string(f.op);
  spec.lambda = f.lambda;
  spec.density = f.density;
  spec.drop_p = f.drop_p;
  spec.seed = seed;
  spec.validate();
  return spec;
}

uint64_t elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return static_cast<uint64_t>(std::chrono::duration_cast<std::chrono::milliseconds>(
                                   std::chrono::steady_clock::now() - t0)
                                   .count());
}

void emit_metrics(const GlobalOpts& g, const mp::RunRow& row) {
  if (g.metrics_out.empty()) return;
  mp::write_metrics(g.metrics_out, {row});
}

int cmd_gen(const GlobalOpts& g, const std::string& out_dir, uint32_t experts,
            uint64_t elements, const std::string& dtype, double divergence,
            double hot_fraction) {
  mp::WorkloadSpec spec;
  spec.total_elements = elements;
  spec.experts = experts;
  spec.seed = g.seed;
  spec.dtype = mp::dtype_from_string(dtype);
  spec.divergence = divergence;
  spec.hot_fraction = hot_fraction;
  mp::IoLedger ledger;
  mp::Workload w = mp::gen_workload(out_dir, spec, &ledger);
  nlohmann::json j{{"dir", out_dir},
                   {"base_id", w.base_id},
                   {"base_file", w.base_path.string()},
                   {"expert_ids", w.expert_ids},
                   {"bytes_written", ledger.output_write()}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_analyze(const GlobalOpts& g, const std::string& model, const std::string& base,
                bool deltas) {
  mp::IoLedger ledger;
  mp::Catalog catalog(g.catalog_dir, mp::Catalog::Mode::kReadWrite, &ledger);
  uint64_t written;
  if (base.empty()) {
    if (deltas) throw mp::InvalidArgument("--deltas requires --base");
    written = mp::analyze_model(model, catalog, g.block_size, &ledger);
  } else {
    written = mp::analyze_delta(model, base, catalog, g.block_size, deltas, &ledger);
  }
  catalog.flush();
  nlohmann::json j{{"model", model},
                   {"block_size_elements", g.block_size},
                   {"records_written", written},
                   {"meta_bytes", ledger.meta_io()}};
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_plan(const GlobalOpts& g, const std::string& base,
             const std::vector<std::string>& experts, const OpFlags& opf,
             const std::string& budget_text, bool deltas, const std::string& out) {
  mp::IoLedger ledger;
  mp::Catalog catalog(g.catalog_dir, mp::Catalog::Mode::kReadWrite, &ledger);
  uint64_t naive_cost = 0;
  std::vector<std::filesystem::path> paths;
  for (const auto& e : experts) {
    paths.emplace_back(e);
    mp::CheckpointReader er(e);
    ledger.charge(mp::IoCat::kMetaIo, er.header_region_bytes());
    naive_cost += er.header().payload_bytes();
  }
  uint64_t budget = mp::parse_budget(budget_text, naive_cost);
  mp::OperatorSpec op = make_op(opf, g.seed);
  mp::MergePlan plan =
      mp::plan_gen(base, paths, op, budget, catalog, g.block_size, deltas, &ledger);
  catalog.flush();
  if (out.empty()) {
    std::cout << plan.to_json().dump(2) << "\n";
  } else {
    plan.save(out);
    nlohmann::json j{{"plan_id", plan.plan_id},
                     {"plan_file", out},
                     {"budget_B", plan.budget_b},
                     {"estimated_expert_cost", plan.estimated_expert_cost},
                     {"selected_blocks", plan.selected.size()},
                     {"fallback_used", plan.fallback_used},
                     {"skipped_candidates", plan.skipped_candidates}};
    std::cout << j.dump(2) << "\n";
  }
  return 0;
}

int cmd_merge(const GlobalOpts& g, const std::string& plan_file, bool reuse,
              unsigned threads) {
  auto t0 = std::chrono::steady_clock::now();
  mp::MergePlan plan = mp::MergePlan::load(plan_file);
  mp::IoLedger ledger;
  mp::StorePaths store = mp::StorePaths::from_catalog_dir(g.catalog_dir);
  mp::Catalog catalog(g.catalog_dir, mp::Catalog::Mode::kReadWrite, &ledger);
  mp::ExecuteOptions opts;
  opts.reuse = reuse;
  opts.threads = threads;
  mp::MergeResult res = mp::execute_merge(plan, store, catalog, ledger, opts);
  ledger.set_wall_ms(elapsed_ms(t0));
  nlohmann::json j{{"sid", res.sid},
                   {"realized_expert_cost", res.realized_expert_cost},
                   {"reused", res.reused},
                   {"snapshot", store.snapshot_data(res.sid).string()},
                   {"manifest", store.snapshot_manifest(res.sid).string()}};
  std::cout << j.dump(2) << "\n";
  emit_metrics(g, mp::make_row("mergepipe", plan.expert_ids.size(),
                               mp::to_string(plan.op.kind), plan.budget_b, ledger,
                               res.sid));
  return 0;
}

int cmd_naive(const GlobalOpts& g, const std::string& base,
              const std::vector<std::string>& experts, const OpFlags& opf, bool deltas,
              unsigned threads) {
  auto t0 = std::chrono::steady_clock::now();
  mp::IoLedger ledger;
  mp::StorePaths store = mp::StorePaths::from_catalog_dir(g.catalog_dir);
  mp::Catalog catalog(g.catalog_dir, mp::Catalog::Mode::kReadWrite, &ledger);
  std::vector<std::filesystem::path> paths(experts.begin(), experts.end());
  mp::OperatorSpec op = make_op(opf, g.seed);
  mp::MergeResult res = mp::naive_merge(base, paths, op, store, catalog, ledger,
                                        g.block_size, deltas, threads);
  ledger.set_wall_ms(elapsed_ms(t0));
  nlohmann::json j{{"sid", res.sid},
                   {"realized_expert_cost", res.realized_expert_cost},
                   {"snapshot", store.snapshot_data(res.sid).string()},
                   {"manifest", store.snapshot_manifest(res.sid).string()}};
  std::cout << j.dump(2) << "\n";
  emit_metrics(g, mp::make_row("naive", paths.size(), mp::to_string(op.kind), 0, ledger,
                               res.sid));
  return 0;
}

int cmd_inspect(const GlobalOpts& g, const std::string& target) {
  std::filesystem::path p(target);
  if (std::filesystem::is_regular_file(p)) {
    if (p.extension() == ".mpck") {
      mp::CheckpointReader reader(p);
      const mp::CheckpointHeader& h = reader.header();
      nlohmann::json tensors = nlohmann::json::array();
      for (const mp::TensorMeta& tm : h.tensors) {
        tensors.push_back({{"name", tm.name},
                           {"dtype", mp::to_string(tm.dtype)},
                           {"shape", tm.shape},
                           {"offset_bytes", tm.offset_bytes},
                           {"length_bytes", tm.length_bytes},
                           {"blocks", mp::block_count(tm.element_count(), g.block_size)}});
      }
      nlohmann::json j{{"model_id", h.model_id},
                       {"payload_bytes", h.payload_bytes()},
                       {"block_size_elements", g.block_size},
                       {"tensors", tensors}};
      std::cout << j.dump(2) << "\n";
      return 0;
    }
    std::ifstream in(p);
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw mp::CorruptData(target + " is not valid JSON");
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  mp::StorePaths store = mp::StorePaths::from_catalog_dir(g.catalog_dir);
  if (target == "snapshots") {
    nlohmann::json j{{"snapshots", mp::list_snapshots(store)}};
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  std::filesystem::path manifest = store.snapshot_manifest(target);
  if (!std::filesystem::exists(manifest))
    throw mp::IoError("no such file or snapshot: " + target);
  std::ifstream in(manifest);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw mp::CorruptData(manifest.string() + " is not valid JSON");
  std::cout << j.dump(2) << "\n";
  return 0;
}

int cmd_verify(const GlobalOpts& g, const std::string& sid) {
  mp::IoLedger ledger;
  mp::StorePaths store = mp::StorePaths::from_catalog_dir(g.catalog_dir);
  mp::VerifyReport rep = mp::verify_snapshot(store, sid, &ledger);
  std::cout << rep.to_json().dump(2) << "\n";
  return rep.ok ? 0 : 2;
}

int cmd_diff(const GlobalOpts& g, const std::string& sid_a, const std::string& sid_b) {
  mp::StorePaths store = mp::StorePaths::from_catalog_dir(g.catalog_dir);
  mp::Catalog catalog(g.catalog_dir, mp::Catalog::Mode::kReadOnly, nullptr);
  mp::DiffReport rep = mp::snapshot_diff(store, catalog, sid_a, sid_b, g.block_size);
  std::cout << rep.to_json().dump(2) << "\n";
  return 0;
}

int cmd_cost(const GlobalOpts& g, const std::string& plan_file) {
  mp::MergePlan plan = mp::MergePlan::load(plan_file);
  mp::Catalog catalog(g.catalog_dir, mp::Catalog::Mode::kReadOnly, nullptr);
  mp::CheckpointReader base(plan.base_path);
  uint64_t planned = mp::planned_expert_cost(plan, catalog);
  mp::CostBreakdown cb = mp::estimate_total(
      plan, base.header(), mp::default_meta_estimate(base.header().payload_bytes()));
  nlohmann::json j = cb.to_json();
  j["total"] = cb.total();
  j["planned_expert_cost"] = planned;
  j["budget_B"] = plan.budget_b;
  j["feasible"] = mp::is_feasible(planned, plan.budget_b);
  std::cout << j.dump(2) << "\n";
  return 0;
}

int emit_rows(const GlobalOpts& g, const std::vector<mp::RunRow>& rows) {
  std::cout << mp::metrics_csv_header() << "\n";
  for (const mp::RunRow& r : rows) std::cout << mp::metrics_csv_line(r) << "\n";
  if (!g.metrics_out.empty()) mp::write_metrics(g.metrics_out, rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"budgeted block-level model merging"};
  app.require_subcommand(1);
  app.fallthrough();  // global flags may follow the subcommand

  GlobalOpts g;
  app.add_option("--catalog", g.catalog_dir, "catalog directory (store root is its parent)")
      ->capture_default_str();
  app.add_option("--block-size", g.block_size, "block size in elements")
      ->capture_default_str();
  app.add_option("--metrics-out", g.metrics_out,
                 "write run metrics to this .csv or .json file");
  app.add_option("--seed", g.seed, "seed for gen and the dare operator")
      ->capture_default_str();

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic base + experts family");
  std::string gen_out = "workload";
  uint32_t gen_experts = 4;
  uint64_t gen_elements = 16ull << 20;
  std::string gen_dtype = "f32";
  double gen_divergence = 0.05;
  double gen_hot = 0.25;
  gen->add_option("--out", gen_out, "output directory")->capture_default_str();
  gen->add_option("--experts", gen_experts, "number of experts")->capture_default_str();
  gen->add_option("--elements", gen_elements, "total elements per checkpoint")
      ->capture_default_str();
  gen->add_option("--dtype", gen_dtype, "f32|f16|bf16")->capture_default_str();
  gen->add_option("--divergence", gen_divergence, "typical expert delta magnitude")
      ->capture_default_str();
  gen->add_option("--hot-fraction", gen_hot, "fraction of regions an expert moves")
      ->capture_default_str();

  // analyze
  auto* analyze = app.add_subcommand("analyze", "sketch a checkpoint into the catalog");
  std::string an_model, an_base;
  bool an_deltas = false;
  analyze->add_option("model", an_model, "checkpoint to analyze")->required();
  analyze->add_option("--base", an_base, "base checkpoint for delta sketches");
  analyze->add_flag("--deltas", an_deltas, "model already stores deltas from the base");

  // plan
  auto* plan = app.add_subcommand("plan", "select expert blocks under a read budget");
  std::string pl_base, pl_budget = "1.0", pl_out;
  std::vector<std::string> pl_experts;
  bool pl_deltas = false;
  OpFlags pl_op;
  plan->add_option("--base", pl_base, "base checkpoint")->required();
  plan->add_option("--experts", pl_experts, "expert checkpoints")
      ->required()
      ->delimiter(',');
  plan->add_option("--budget", pl_budget,
                   "expert-read budget: bytes (suffix B/KiB/MiB/GiB) or fraction of "
                   "the naive cost when the value contains '.'")
      ->capture_default_str();
  plan->add_flag("--deltas", pl_deltas, "experts already store deltas from the base");
  plan->add_option("--out", pl_out, "write plan JSON here instead of stdout");
  add_op_flags(plan, pl_op);

  // merge
  auto* merge = app.add_subcommand("merge", "execute a plan and publish a snapshot");
  std::string mg_plan;
  bool mg_reuse = false;
  unsigned mg_threads = 1;
  merge->add_option("--plan", mg_plan, "plan JSON from `plan --out`")->required();
  merge->add_flag("--reuse", mg_reuse, "return an existing snapshot of this plan");
  merge->add_option("--threads", mg_threads, "tensor-parallel workers")
      ->capture_default_str();

  // naive
  auto* naive = app.add_subcommand("naive", "unbudgeted full-read merge baseline");
  std::string nv_base;
  std::vector<std::string> nv_experts;
  bool nv_deltas = false;
  unsigned nv_threads = 1;
  OpFlags nv_op;
  naive->add_option("--base", nv_base, "base checkpoint")->required();
  naive->add_option("--experts", nv_experts, "expert checkpoints")
      ->required()
      ->delimiter(',');
  naive->add_flag("--deltas", nv_deltas, "experts already store deltas from the base");
  naive->add_option("--threads", nv_threads, "tensor-parallel workers")
      ->capture_default_str();
  add_op_flags(naive, nv_op);

  // inspect
  auto* inspect = app.add_subcommand(
      "inspect", "print a checkpoint header, plan, manifest, or the snapshot list");
  std::string in_target;
  inspect->add_option("target", in_target,
                      ".mpck file, .json file, snapshot sid, or `snapshots`")
      ->required();

  // verify
  auto* verify = app.add_subcommand("verify", "recheck a published snapshot");
  std::string vf_sid;
  verify->add_option("sid", vf_sid, "snapshot id")->required();

  // diff
  auto* diff = app.add_subcommand("diff", "compare two snapshots");
  std::string df_a, df_b;
  diff->add_option("sid_a", df_a)->required();
  diff->add_option("sid_b", df_b)->required();

  // cost
  auto* cost = app.add_subcommand("cost", "estimated cost breakdown of a plan");
  std::string ct_plan;
  cost->add_option("plan", ct_plan, "plan JSON file")->required();

  // bench
  auto* bench = app.add_subcommand("bench", "measurement sweeps (CSV rows on stdout)");
  bench->require_subcommand(1);
  std::string be_root = "bench";
  uint64_t be_elements = 16ull << 20;
  std::string be_dtype = "f32";
  double be_divergence = 0.05;
  double be_hot = 0.25;
  unsigned be_threads = 1;
  OpFlags be_op;
  bench->add_option("--root", be_root, "scratch root for workloads and stores")
      ->capture_default_str();
  bench->add_option("--elements", be_elements, "total elements per checkpoint")
      ->capture_default_str();
  bench->add_option("--dtype", be_dtype, "f32|f16|bf16")->capture_default_str();
  bench->add_option("--divergence", be_divergence, "expert delta magnitude")
      ->capture_default_str();
  bench->add_option("--hot-fraction", be_hot, "fraction of regions an expert moves")
      ->capture_default_str();
  bench->add_option("--threads", be_threads, "tensor-parallel workers")
      ->capture_default_str();
  add_op_flags(bench, be_op);

  auto* be_scaling = bench->add_subcommand("scaling", "expert-count sweep");
  std::vector<uint32_t> sc_ks = {2, 4, 6, 8, 10, 12, 14, 16, 18, 20};
  std::string sc_budget = "13MiB";
  be_scaling->add_option("--ks", sc_ks, "expert counts")->delimiter(',');
  be_scaling->add_option("--budget", sc_budget, "fixed budget for the budgeted rows")
      ->capture_default_str();

  auto* be_budget = bench->add_subcommand("budget", "budget-fraction sweep");
  uint32_t bu_k = 10;
  std::vector<double> bu_fractions = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  be_budget->add_option("--k", bu_k, "expert count")->capture_default_str();
  be_budget->add_option("--fractions", bu_fractions, "fractions of the naive cost")
      ->delimiter(',');

  auto* be_bsize = bench->add_subcommand("block-size", "block-size sweep");
  uint32_t bs_k = 8;
  std::vector<uint64_t> bs_sizes = {16384, 131072, 524288};
  std::string bs_budget = "0.3";
  be_bsize->add_option("--k", bs_k, "expert count")->capture_default_str();
  be_bsize->add_option("--sizes", bs_sizes, "block sizes in elements")->delimiter(',');
  be_bsize->add_option("--budget", bs_budget, "budget per run")->capture_default_str();

  auto* be_stab = bench->add_subcommand("stability", "repeat one merge in fresh stores");
  uint32_t st_k = 8;
  uint32_t st_repeats = 5;
  std::string st_budget = "0.25";
  be_stab->add_option("--k", st_k, "expert count")->capture_default_str();
  be_stab->add_option("--repeats", st_repeats, "number of repeats")->capture_default_str();
  be_stab->add_option("--budget", st_budget, "budget per run")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed())
      return cmd_gen(g, gen_out, gen_experts, gen_elements, gen_dtype, gen_divergence,
                     gen_hot);
    if (analyze->parsed()) return cmd_analyze(g, an_model, an_base, an_deltas);
    if (plan->parsed())
      return cmd_plan(g, pl_base, pl_experts, pl_op, pl_budget, pl_deltas, pl_out);
    if (merge->parsed()) return cmd_merge(g, mg_plan, mg_reuse, mg_threads);
    if (naive->parsed())
      return cmd_naive(g, nv_base, nv_experts, nv_op, nv_deltas, nv_threads);
    if (inspect->parsed()) return cmd_inspect(g, in_target);
    if (verify->parsed()) return cmd_verify(g, vf_sid);
    if (diff->parsed()) return cmd_diff(g, df_a, df_b);
    if (cost->parsed()) return cmd_cost(g, ct_plan);
    if (bench->parsed()) {
      mp::BenchConfig cfg;
      cfg.root = be_root;
      cfg.op = make_op(be_op, g.seed);
      cfg.block_size_elements = g.block_size;
      cfg.total_elements = be_elements;
      cfg.seed = g.seed;
      cfg.dtype = mp::dtype_from_string(be_dtype);
      cfg.divergence = be_divergence;
      cfg.hot_fraction = be_hot;
      cfg.threads = be_threads;
      if (be_scaling->parsed()) return emit_rows(g, mp::bench_scaling(cfg, sc_ks, sc_budget));
      if (be_budget->parsed()) return emit_rows(g, mp::bench_budget(cfg, bu_k, bu_fractions));
      if (be_bsize->parsed())
        return emit_rows(g, mp::bench_block_size(cfg, bs_k, bs_sizes, bs_budget));
      if (be_stab->parsed())
        return emit_rows(g, mp::bench_stability(cfg, st_k, st_budget, st_repeats));
    }
    std::cerr << "error: no subcommand\n";
    return 1;
  } catch (const mp::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const mp::VerificationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const mp::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
