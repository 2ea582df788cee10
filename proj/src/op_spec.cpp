#include "mergepipe/op_spec.hpp"

#include "mergepipe/errors.hpp"

namespace mergepipe {

const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::kAvg:
      return "avg";
    case OpKind::kTies:
      return "ties";
    case OpKind::kDare:
      return "dare";
  }
  throw InvalidArgument("unknown operator kind value");
}

OpKind op_kind_from_string(const std::string& s) {
  if (s == "avg") return OpKind::kAvg;
  if (s == "ties") return OpKind::kTies;
  if (s == "dare") return OpKind::kDare;
  throw InvalidArgument("unknown operator: " + s);
}

void OperatorSpec::validate() const {
  if (!(lambda >= 0.0 && lambda <= 2.0)) {
    throw InvalidArgument("operator lambda out of range [0,2]");
  }
  if (kind == OpKind::kTies && !(density > 0.0 && density <= 1.0)) {
    throw InvalidArgument("ties density out of range (0,1]");
  }
  if (kind == OpKind::kDare && !(drop_p >= 0.0 && drop_p < 1.0)) {
    throw InvalidArgument("dare drop_p out of range [0,1)");
  }
}

nlohmann::json OperatorSpec::to_json() const {
  return nlohmann::json{{"kind", to_string(kind)},
                        {"lambda", lambda},
                        {"density", density},
                        {"drop_p", drop_p},
                        {"seed", seed}};
}

OperatorSpec OperatorSpec::from_json(const nlohmann::json& j) {
  OperatorSpec op;
  op.kind = op_kind_from_string(j.at("kind").get<std::string>());
  op.lambda = j.at("lambda").get<double>();
  op.density = j.at("density").get<double>();
  op.drop_p = j.at("drop_p").get<double>();
  op.seed = j.at("seed").get<uint64_t>();
  return op;
}

}  // namespace mergepipe
