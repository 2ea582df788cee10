// _mergepipe: python bindings for the main pipeline operations. Everything
// structured crosses the boundary as plain dicts/lists (converted from the
// same JSON representations the CLI prints), tensors as float32 numpy arrays.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mergepipe/analyzer.hpp"
#include "mergepipe/canonical.hpp"
#include "mergepipe/catalog.hpp"
#include "mergepipe/checkpoint.hpp"
#include "mergepipe/cost_model.hpp"
#include "mergepipe/dtype.hpp"
#include "mergepipe/engine.hpp"
#include "mergepipe/errors.hpp"
#include "mergepipe/metrics.hpp"
#include "mergepipe/planner.hpp"
#include "mergepipe/workload.hpp"

namespace py = pybind11;
namespace mp = mergepipe;

namespace {

py::object to_py(const nlohmann::json& j) {
  using value_t = nlohmann::json::value_t;
  switch (j.type()) {
    case value_t::boolean:
      return py::bool_(j.get<bool>());
    case value_t::number_integer:
      return py::int_(j.get<int64_t>());
    case value_t::number_unsigned:
      return py::int_(j.get<uint64_t>());
    case value_t::number_float:
      return py::float_(j.get<double>());
    case value_t::string:
      return py::str(j.get<std::string>());
    case value_t::array: {
      py::list out;
      for (const auto& e : j) out.append(to_py(e));
      return out;
    }
    case value_t::object: {
      py::dict out;
      for (const auto& [k, v] : j.items()) out[py::str(k)] = to_py(v);
      return out;
    }
    default:
      return py::none();
  }
}

nlohmann::json to_json(const py::handle& h) {
  if (h.is_none()) return nullptr;
  if (py::isinstance<py::bool_>(h)) return h.cast<bool>();
  if (py::isinstance<py::int_>(h)) {
    int64_t v = h.cast<int64_t>();
    if (v >= 0) return uint64_t(v);
    return v;
  }
  if (py::isinstance<py::float_>(h)) return h.cast<double>();
  if (py::isinstance<py::str>(h)) return h.cast<std::string>();
  if (py::isinstance<py::list>(h) || py::isinstance<py::tuple>(h)) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : h) a.push_back(to_json(e));
    return a;
  }
  if (py::isinstance<py::dict>(h)) {
    nlohmann::json o = nlohmann::json::object();
    for (const auto& item : h.cast<py::dict>())
      o[item.first.cast<std::string>()] = to_json(item.second);
    return o;
  }
  throw mp::InvalidArgument("unsupported python type in structured value");
}

mp::OperatorSpec make_op(const std::string& op, double lambda, double density,
                         double drop_p, uint64_t seed) {
  mp::OperatorSpec spec;
  spec.kind = mp::op_kind_from_string(op);
  spec.lambda = lambda;
  spec.density = density;
  spec.drop_p = drop_p;
  spec.seed = seed;
  spec.validate();
  return spec;
}

// budget: python int = absolute bytes, python str = the CLI grammar
// (fraction of naive when it contains '.', else bytes with an optional
// B/KiB/MiB/GiB suffix).
uint64_t resolve_budget(const py::handle& budget, uint64_t naive_cost) {
  if (py::isinstance<py::str>(budget))
    return mp::parse_budget(budget.cast<std::string>(), naive_cost);
  if (py::isinstance<py::int_>(budget)) {
    int64_t v = budget.cast<int64_t>();
    if (v < 0) throw mp::InvalidArgument("budget must be nonnegative");
    return uint64_t(v);
  }
  throw mp::InvalidArgument("budget must be an int (bytes) or a str");
}

uint64_t naive_cost_of(const std::vector<std::string>& experts) {
  uint64_t total = 0;
  for (const auto& e : experts) total += mp::CheckpointReader(e).header().payload_bytes();
  return total;
}

nlohmann::json result_json(const mp::MergeResult& res, const mp::StorePaths& store,
                           const mp::IoLedger& ledger) {
  return nlohmann::json{{"sid", res.sid},
                        {"realized_expert_cost", res.realized_expert_cost},
                        {"reused", res.reused},
                        {"snapshot", store.snapshot_data(res.sid).string()},
                        {"manifest", store.snapshot_manifest(res.sid).string()},
                        {"base_read", ledger.base_read()},
                        {"expert_read", ledger.expert_read()},
                        {"output_write", ledger.output_write()},
                        {"meta_io", ledger.meta_io()}};
}

}  // namespace

PYBIND11_MODULE(_mergepipe, m) {
  m.doc() = "budget-aware block-level model merging over MPCK checkpoints";
  m.attr("DEFAULT_BLOCK_ELEMENTS") = py::int_(mp::kDefaultBlockElements);

  // most-derived first: pybind tries translators newest-registered first
  py::register_exception<mp::Error>(m, "MergeError", PyExc_RuntimeError);
  py::register_exception<mp::IoError>(m, "IoError", PyExc_OSError);
  py::register_exception<mp::CorruptData>(m, "CorruptData", PyExc_RuntimeError);
  py::register_exception<mp::ShapeMismatch>(m, "ShapeMismatch", PyExc_ValueError);
  py::register_exception<mp::MissingTensor>(m, "MissingTensor", PyExc_KeyError);
  py::register_exception<mp::ImmutabilityViolation>(m, "ImmutabilityViolation",
                                                    PyExc_RuntimeError);
  py::register_exception<mp::VerificationError>(m, "VerificationError", PyExc_RuntimeError);
  py::register_exception<mp::InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);

  m.def(
      "write_checkpoint",
      [](const std::string& path, const std::string& model_id, const py::dict& tensors,
         const std::string& dtype) {
        mp::DType d = mp::dtype_from_string(dtype);
        std::vector<mp::TensorInit> inits;
        for (const auto& item : tensors) {
          auto arr = py::array_t<float, py::array::c_style | py::array::forcecast>::ensure(
              item.second);
          if (!arr) throw mp::InvalidArgument("tensor values must be numeric arrays");
          mp::TensorInit t;
          t.name = item.first.cast<std::string>();
          t.dtype = d;
          for (py::ssize_t i = 0; i < arr.ndim(); i++)
            t.shape.push_back(uint64_t(arr.shape(i)));
          t.values.assign(arr.data(), arr.data() + arr.size());
          inits.push_back(std::move(t));
        }
        mp::write_checkpoint(path, model_id, inits);
      },
      py::arg("path"), py::arg("model_id"), py::arg("tensors"), py::arg("dtype") = "f32",
      "Write tensors (dict name -> array, cast to float32) as an MPCK checkpoint.");

  m.def(
      "read_checkpoint",
      [](const std::string& path) {
        mp::CheckpointReader reader(path);
        py::dict tensors, dtypes;
        for (size_t i = 0; i < reader.header().tensors.size(); i++) {
          const mp::TensorMeta& tm = reader.header().tensors[i];
          std::vector<float> values = reader.read_tensor_f32(i);
          std::vector<py::ssize_t> shape(tm.shape.begin(), tm.shape.end());
          py::array_t<float> arr(shape);
          std::memcpy(arr.mutable_data(), values.data(), values.size() * sizeof(float));
          tensors[py::str(tm.name)] = std::move(arr);
          dtypes[py::str(tm.name)] = mp::to_string(tm.dtype);
        }
        py::dict out;
        out["model_id"] = reader.header().model_id;
        out["tensors"] = tensors;
        out["dtypes"] = dtypes;
        out["payload_bytes"] = reader.header().payload_bytes();
        return out;
      },
      py::arg("path"), "Read an MPCK checkpoint into float32 numpy arrays.");

  m.def(
      "gen_workload",
      [](const std::string& dir, uint64_t elements, uint32_t experts, uint64_t seed,
         const std::string& dtype, double divergence, double hot_fraction) {
        mp::WorkloadSpec spec;
        spec.total_elements = elements;
        spec.experts = experts;
        spec.seed = seed;
        spec.dtype = mp::dtype_from_string(dtype);
        spec.divergence = divergence;
        spec.hot_fraction = hot_fraction;
        mp::Workload w = mp::gen_workload(dir, spec);
        std::vector<std::string> paths;
        for (const auto& p : w.expert_paths) paths.push_back(p.string());
        return to_py(nlohmann::json{{"base_id", w.base_id},
                                    {"base_file", w.base_path.string()},
                                    {"expert_ids", w.expert_ids},
                                    {"expert_files", paths}});
      },
      py::arg("dir"), py::arg("elements") = 1u << 20, py::arg("experts") = 4,
      py::arg("seed") = 4242, py::arg("dtype") = "f32", py::arg("divergence") = 0.05,
      py::arg("hot_fraction") = 0.25,
      "Generate a deterministic synthetic base + experts family.");

  m.def(
      "analyze",
      [](const std::string& model, const std::string& catalog_dir, uint64_t block_size,
         const std::string& base, bool deltas) {
        mp::Catalog catalog(catalog_dir, mp::Catalog::Mode::kReadWrite);
        uint64_t written;
        if (base.empty()) {
          if (deltas) throw mp::InvalidArgument("deltas=True requires base=");
          written = mp::analyze_model(model, catalog, block_size);
        } else {
          written = mp::analyze_delta(model, base, catalog, block_size, deltas);
        }
        catalog.flush();
        return written;
      },
      py::arg("model"), py::arg("catalog"), py::arg("block_size") = mp::kDefaultBlockElements,
      py::arg("base") = "", py::arg("deltas") = false,
      "Sketch a checkpoint (optionally as deltas against base) into the catalog; "
      "returns the number of records written.");

  m.def(
      "plan",
      [](const std::string& base, const std::vector<std::string>& experts,
         const std::string& catalog_dir, const py::object& budget, uint64_t block_size,
         const std::string& op, double lambda, double density, double drop_p, uint64_t seed,
         bool deltas, const std::string& out) {
        mp::Catalog catalog(catalog_dir, mp::Catalog::Mode::kReadWrite);
        uint64_t b = resolve_budget(budget, naive_cost_of(experts));
        std::vector<std::filesystem::path> paths(experts.begin(), experts.end());
        mp::MergePlan plan = mp::plan_gen(base, paths, make_op(op, lambda, density, drop_p, seed),
                                          b, catalog, block_size, deltas);
        catalog.flush();
        if (!out.empty()) plan.save(out);
        return to_py(plan.to_json());
      },
      py::arg("base"), py::arg("experts"), py::arg("catalog"), py::arg("budget") = "1.0",
      py::arg("block_size") = mp::kDefaultBlockElements, py::arg("op") = "avg",
      py::arg("lambda_") = 1.0, py::arg("density") = 0.2, py::arg("drop_p") = 0.9,
      py::arg("seed") = 42, py::arg("deltas") = false, py::arg("out") = "",
      "Select expert blocks under a read budget; returns the plan as a dict "
      "(and writes it to `out` when given).");

  m.def(
      "merge",
      [](const py::object& plan_obj, const std::string& catalog_dir, bool reuse,
         unsigned threads) {
        mp::MergePlan plan = py::isinstance<py::str>(plan_obj)
                                 ? mp::MergePlan::load(plan_obj.cast<std::string>())
                                 : mp::MergePlan::from_json(to_json(plan_obj));
        mp::IoLedger ledger;
        mp::StorePaths store = mp::StorePaths::from_catalog_dir(catalog_dir);
        mp::Catalog catalog(catalog_dir, mp::Catalog::Mode::kReadWrite, &ledger);
        mp::ExecuteOptions opts;
        opts.reuse = reuse;
        opts.threads = threads;
        mp::MergeResult res = mp::execute_merge(plan, store, catalog, ledger, opts);
        return to_py(result_json(res, store, ledger));
      },
      py::arg("plan"), py::arg("catalog"), py::arg("reuse") = false, py::arg("threads") = 1,
      "Execute a plan (dict or saved plan path) and publish an immutable snapshot.");

  m.def(
      "naive_merge",
      [](const std::string& base, const std::vector<std::string>& experts,
         const std::string& catalog_dir, uint64_t block_size, const std::string& op,
         double lambda, double density, double drop_p, uint64_t seed, bool deltas,
         unsigned threads) {
        mp::IoLedger ledger;
        mp::StorePaths store = mp::StorePaths::from_catalog_dir(catalog_dir);
        mp::Catalog catalog(catalog_dir, mp::Catalog::Mode::kReadWrite, &ledger);
        std::vector<std::filesystem::path> paths(experts.begin(), experts.end());
        mp::MergeResult res =
            mp::naive_merge(base, paths, make_op(op, lambda, density, drop_p, seed), store,
                            catalog, ledger, block_size, deltas, threads);
        return to_py(result_json(res, store, ledger));
      },
      py::arg("base"), py::arg("experts"), py::arg("catalog"),
      py::arg("block_size") = mp::kDefaultBlockElements, py::arg("op") = "avg",
      py::arg("lambda_") = 1.0, py::arg("density") = 0.2, py::arg("drop_p") = 0.9,
      py::arg("seed") = 42, py::arg("deltas") = false, py::arg("threads") = 1,
      "Full-read baseline merge through the same atomic publish path.");

  m.def(
      "verify",
      [](const std::string& sid, const std::string& catalog_dir) {
        mp::StorePaths store = mp::StorePaths::from_catalog_dir(catalog_dir);
        return to_py(mp::verify_snapshot(store, sid).to_json());
      },
      py::arg("sid"), py::arg("catalog"),
      "Recheck a published snapshot; the result dict carries ok/failures.");

  m.def(
      "diff",
      [](const std::string& sid_a, const std::string& sid_b, const std::string& catalog_dir,
         uint64_t block_size) {
        mp::StorePaths store = mp::StorePaths::from_catalog_dir(catalog_dir);
        mp::Catalog catalog(catalog_dir, mp::Catalog::Mode::kReadOnly);
        return to_py(mp::snapshot_diff(store, catalog, sid_a, sid_b, block_size).to_json());
      },
      py::arg("sid_a"), py::arg("sid_b"), py::arg("catalog"),
      py::arg("block_size") = mp::kDefaultBlockElements, "Compare two snapshots.");

  m.def(
      "snapshots",
      [](const std::string& catalog_dir) {
        return mp::list_snapshots(mp::StorePaths::from_catalog_dir(catalog_dir));
      },
      py::arg("catalog"), "Sids of fully committed snapshots, sorted.");

  m.def(
      "canonical_digest",
      [](const py::object& value) { return mp::canonical_digest(to_json(value)); },
      py::arg("value"),
      "SHA-256 hex digest of the canonical JSON form of a python value.");
}
