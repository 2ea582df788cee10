#include "mergepipe/operators.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "mergepipe/errors.hpp"
#include "mergepipe/sha256.hpp"

namespace mergepipe {

namespace {

void check_batch(const DeltaBatch& batch) {
  uint32_t prev = 0;
  bool first = true;
  for (const auto& e : batch.deltas) {
    if (e.delta.size() != batch.base.size())
      throw InvalidArgument("delta length does not match base block");
    if (!first && e.expert_idx <= prev)
      throw InvalidArgument("batch deltas must be ascending by expert");
    prev = e.expert_idx;
    first = false;
  }
}

}  // namespace

uint64_t tensor_digest64(const std::string& tensor_id) {
  Sha256 hasher;
  hasher.update(tensor_id.data(), tensor_id.size());
  std::array<uint8_t, 32> d = hasher.finish();
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(d[i]) << (8 * i);
  return v;
}

void apply_avg(const DeltaBatch& batch, double lambda, uint32_t k_total,
               std::vector<float>& out) {
  if (k_total == 0) throw InvalidArgument("k_total must be >= 1");
  check_batch(batch);
  size_t n = batch.base.size();
  out.resize(n);
  float coef = static_cast<float>(lambda / static_cast<double>(k_total));
  for (size_t j = 0; j < n; ++j) {
    float sum = 0.0f;
    for (const auto& e : batch.deltas) sum += e.delta[j];
    out[j] = batch.base[j] + coef * sum;
  }
}

void apply_ties(const DeltaBatch& batch, double lambda, double density,
                std::vector<float>& out) {
  if (!(density > 0.0 && density <= 1.0)) throw InvalidArgument("density must be in (0, 1]");
  check_batch(batch);
  size_t n = batch.base.size();
  out.resize(n);

  // Per-expert trim within this block. The keep set (top-k by magnitude,
  // ties to the lower index) is unique, so any selection algorithm yields
  // the same kept values.
  size_t k = static_cast<size_t>(std::ceil(density * static_cast<double>(n)));
  if (k > n) k = n;
  std::vector<std::vector<float>> kept(batch.deltas.size());
  std::vector<uint32_t> order(n);
  for (size_t i = 0; i < batch.deltas.size(); ++i) {
    std::span<const float> delta = batch.deltas[i].delta;
    kept[i].assign(n, 0.0f);
    if (k == n) {
      std::copy(delta.begin(), delta.end(), kept[i].begin());
      continue;
    }
    std::iota(order.begin(), order.end(), 0u);
    std::nth_element(order.begin(), order.begin() + k, order.end(),
                     [&](uint32_t a, uint32_t b) {
                       float ma = std::fabs(delta[a]);
                       float mb = std::fabs(delta[b]);
                       if (ma != mb) return ma > mb;
                       return a < b;
                     });
    for (size_t r = 0; r < k; ++r) kept[i][order[r]] = delta[order[r]];
  }

  float lam = static_cast<float>(lambda);
  for (size_t j = 0; j < n; ++j) {
    float sum = 0.0f;
    for (const auto& kv : kept) sum += kv[j];
    bool positive = sum >= 0.0f;  // zero-sum elects positive
    float acc = 0.0f;
    uint32_t cnt = 0;
    for (const auto& kv : kept) {
      float v = kv[j];
      if ((positive && v > 0.0f) || (!positive && v < 0.0f)) {
        acc += v;
        ++cnt;
      }
    }
    float mean = cnt ? acc / static_cast<float>(cnt) : 0.0f;
    out[j] = batch.base[j] + lam * mean;
  }
}

void apply_dare(const DeltaBatch& batch, double lambda, double drop_p, uint64_t seed,
                std::vector<float>& out) {
  if (!(drop_p >= 0.0 && drop_p < 1.0)) throw InvalidArgument("drop_p must be in [0, 1)");
  check_batch(batch);
  size_t n = batch.base.size();
  out.resize(n);
  float scale = static_cast<float>(1.0 / (1.0 - drop_p));
  float lam = static_cast<float>(lambda);
  for (size_t j = 0; j < n; ++j) {
    uint64_t elem = batch.block_start_element + j;
    float sum = 0.0f;
    for (const auto& e : batch.deltas) {
      double u = uniform01(hash64(seed, e.expert_idx, batch.tensor_digest, elem));
      if (u >= drop_p) sum += e.delta[j] * scale;
    }
    out[j] = batch.base[j] + lam * sum;
  }
}

void apply_operator(const DeltaBatch& batch, const OperatorSpec& op, uint32_t k_total,
                    std::vector<float>& out) {
  switch (op.kind) {
    case OpKind::kAvg:
      apply_avg(batch, op.lambda, k_total, out);
      return;
    case OpKind::kTies:
      apply_ties(batch, op.lambda, op.density, out);
      return;
    case OpKind::kDare:
      apply_dare(batch, op.lambda, op.drop_p, op.seed, out);
      return;
  }
  throw InvalidArgument("unknown operator kind");
}

}  // namespace mergepipe
