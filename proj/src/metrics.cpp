#include "mergepipe/metrics.hpp"

#include <fstream>

#include "mergepipe/errors.hpp"

namespace mergepipe {

nlohmann::json RunRow::to_json() const {
  return nlohmann::json{{"mode", mode},
                        {"K", k},
                        {"op", op},
                        {"budget", budget},
                        {"base_read", base_read},
                        {"expert_read", expert_read},
                        {"output_write", output_write},
                        {"meta_io", meta_io},
                        {"wall_ms", wall_ms},
                        {"sid", sid}};
}

RunRow make_row(const std::string& mode, uint64_t k, const std::string& op,
                uint64_t budget, const IoLedger& ledger, const std::string& sid) {
  RunRow row;
  row.mode = mode;
  row.k = k;
  row.op = op;
  row.budget = budget;
  row.base_read = ledger.base_read();
  row.expert_read = ledger.expert_read();
  row.output_write = ledger.output_write();
  row.meta_io = ledger.meta_io();
  row.wall_ms = ledger.wall_ms();
  row.sid = sid;
  return row;
}

std::string metrics_csv_header() {
  return "mode,K,op,budget,base_read,expert_read,output_write,meta_io,wall_ms,sid";
}

std::string metrics_csv_line(const RunRow& r) {
  std::string out;
  out += r.mode;
  out += ',' + std::to_string(r.k);
  out += ',' + r.op;
  out += ',' + std::to_string(r.budget);
  out += ',' + std::to_string(r.base_read);
  out += ',' + std::to_string(r.expert_read);
  out += ',' + std::to_string(r.output_write);
  out += ',' + std::to_string(r.meta_io);
  out += ',' + std::to_string(r.wall_ms);
  out += ',' + r.sid;
  return out;
}

void write_metrics(const std::filesystem::path& path, const std::vector<RunRow>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open metrics file " + path.string());
  if (path.extension() == ".json") {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : rows) arr.push_back(r.to_json());
    f << arr.dump(2) << '\n';
  } else {
    f << metrics_csv_header() << '\n';
    for (const auto& r : rows) f << metrics_csv_line(r) << '\n';
  }
  if (!f.good()) throw IoError("short write to metrics file " + path.string());
}

}  // namespace mergepipe
