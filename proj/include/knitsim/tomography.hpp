#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <thread>
#include <unordered_map>
#include <vector>

#include "knitsim/channels.hpp"
#include "knitsim/ensembles.hpp"

namespace knitsim {

struct LearningTask {
  QuantumChannel channel;  // only apply() is used on it
  HermitianOperator observable;
  EnsembleKind kind = EnsembleKind::two_design;
  std::uint64_t shots = 1;
  std::uint64_t seed = 0;
  std::uint64_t tag = stream_tag("tomography");  // substream family
};

struct LearnOptions {
  int threads = 1;
  std::optional<double> clip;  // eigenvalue truncation to [−clip, clip]; off by default
};

struct LearnedObservable {
  HermitianOperator estimate;
  std::uint64_t shots_used = 0;
  EnsembleKind kind = EnsembleKind::two_design;
  std::optional<double> norm_bound_cap;
};

struct ShotRecord {
  std::uint64_t probe = 0;
  Eigen::Index outcome = 0;
  double value = 0.0;  // eigenvalue ν of the observed outcome
};

// Kahan summation on matrices.
class CompensatedSum {
 public:
  CompensatedSum(Eigen::Index rows, Eigen::Index cols) : sum_(Mat::Zero(rows, cols)), comp_(Mat::Zero(rows, cols)) {}

  void add(const Mat& x) {
    const Mat y = x - comp_;
    const Mat t = sum_ + y;
    comp_ = (t - sum_) - y;
    sum_ = t;
  }

  const Mat& sum() const { return sum_; }

 private:
  Mat sum_, comp_;
};

inline HermitianOperator clip_spectrum(const HermitianOperator& h, double cap) {
  require(cap >= 0.0, "clip_spectrum: cap must be non-negative");
  const Eig& e = h.eig();
  RVec v = e.values.cwiseMax(-cap).cwiseMin(cap);
  return HermitianOperator(e.vectors * v.asDiagonal() * e.vectors.adjoint());
}

namespace detail {

inline void validate_task(const LearningTask& t) {
  require(t.observable.dim() == t.channel.out_dim(), "learn: observable dim must equal channel out_dim");
  require(t.shots >= 1, "learn: shots must be at least 1");
  require(is_power_of_two(static_cast<std::size_t>(t.channel.in_dim())), "learn: channel in_dim must be a power of two");
}

inline constexpr std::uint64_t kDenseTableLimit = std::uint64_t{1} << 20;

// Outcome tables per probe, filled on first use. Holds the channel output
// for each distinct probe state (the device is deterministic).
class ProbeCache {
 public:
  ProbeCache(const LearningTask& t, int n) : task_(t), n_(n) {
    const std::uint64_t size = ensemble_size(t.kind, n);
    if (size <= kDenseTableLimit) dense_.resize(size);
  }

  const std::vector<double>& cdf(std::uint64_t idx) {
    if (!dense_.empty()) {
      std::vector<double>& slot = dense_[idx];
      if (slot.empty()) slot = compute(idx);
      return slot;
    }
    auto it = sparse_.find(idx);
    if (it != sparse_.end()) return it->second;
    return sparse_.emplace(idx, compute(idx)).first->second;
  }

 private:
  std::vector<double> compute(std::uint64_t idx) const {
    const ProbeSample s = probe(task_.kind, n_, idx);
    const Mat out = knitsim::apply(task_.channel, Mat(s.state * s.state.adjoint()));
    return cumulative(probabilities_in_basis(task_.observable.eig().vectors, out));
  }

  const LearningTask& task_;
  int n_;
  std::vector<std::vector<double>> dense_;
  std::unordered_map<std::uint64_t, std::vector<double>> sparse_;
};

using CountTable = std::vector<std::pair<std::uint64_t, std::uint64_t>>;  // (probe·d_out + outcome, count), sorted

// Counts keyed by probe · d_out + outcome, for shots in [begin, end).
inline CountTable count_shots(const LearningTask& t, int n, std::uint64_t begin, std::uint64_t end) {
  ProbeCache cache(t, n);
  const std::uint64_t size = ensemble_size(t.kind, n);
  const auto d_out = static_cast<std::uint64_t>(t.channel.out_dim());
  CountTable table;
  if (size * d_out <= kDenseTableLimit) {
    std::vector<std::uint64_t> counts(size * d_out, 0);
    for (std::uint64_t k = begin; k < end; ++k) {
      Stream rng(t.seed, t.tag, k);
      const std::uint64_t idx = rng.below(size);
      ++counts[idx * d_out + sample_cumulative(cache.cdf(idx), rng.uniform())];
    }
    for (std::uint64_t key = 0; key < counts.size(); ++key)
      if (counts[key] != 0) table.emplace_back(key, counts[key]);
    return table;
  }
  std::unordered_map<std::uint64_t, std::uint64_t> counts;
  for (std::uint64_t k = begin; k < end; ++k) {
    Stream rng(t.seed, t.tag, k);
    const std::uint64_t idx = rng.below(size);
    ++counts[idx * d_out + sample_cumulative(cache.cdf(idx), rng.uniform())];
  }
  table.assign(counts.begin(), counts.end());
  std::sort(table.begin(), table.end());
  return table;
}

inline CountTable merge_counts(const std::vector<CountTable>& parts) {
  std::map<std::uint64_t, std::uint64_t> merged;
  for (const CountTable& p : parts)
    for (const auto& [key, c] : p) merged[key] += c;
  return CountTable(merged.begin(), merged.end());
}

}  // namespace detail

// Estimate Φ†(O) as the mean of `shots` single-shot estimators
// (draw → apply Φ → measure O → estimator). Shot k uses the substream
// (seed, tag, k), so the result does not depend on the thread count.
inline LearnedObservable learn(const LearningTask& task, const LearnOptions& opts = {}) {
  detail::validate_task(task);
  const int n = log2_exact(static_cast<std::size_t>(task.channel.in_dim()));
  const int threads = std::max(1, opts.threads);
  const std::uint64_t total = task.shots;

  detail::CountTable sorted;
  if (threads == 1 || total < 4096) {
    sorted = detail::count_shots(task, n, 0, total);
  } else {
    std::vector<detail::CountTable> parts(static_cast<std::size_t>(threads));
    std::vector<std::thread> pool;
    for (int w = 0; w < threads; ++w) {
      const std::uint64_t b = total * static_cast<std::uint64_t>(w) / static_cast<std::uint64_t>(threads);
      const std::uint64_t e = total * static_cast<std::uint64_t>(w + 1) / static_cast<std::uint64_t>(threads);
      pool.emplace_back([&, w, b, e] { parts[static_cast<std::size_t>(w)] = detail::count_shots(task, n, b, e); });
    }
    for (auto& th : pool) th.join();
    sorted = detail::merge_counts(parts);
  }

  // Fixed reduction order: ascending probe index.
  const auto d_out = static_cast<std::uint64_t>(task.channel.out_dim());
  const RVec& nu = task.observable.eig().values;
  const Eigen::Index d_in = task.channel.in_dim();
  CompensatedSum acc(d_in, d_in);
  std::size_t i = 0;
  while (i < sorted.size()) {
    const std::uint64_t idx = sorted[i].first / d_out;
    double weighted = 0.0;  // Σ_j count_j ν_j, exact for the integer counts in play
    for (; i < sorted.size() && sorted[i].first / d_out == idx; ++i) {
      weighted += static_cast<double>(sorted[i].second) * nu(static_cast<Eigen::Index>(sorted[i].first % d_out));
    }
    acc.add(single_shot_estimator(probe(task.kind, n, idx), weighted / static_cast<double>(total)));
  }

  LearnedObservable out;
  out.estimate = HermitianOperator(hermitian_part(acc.sum()));
  out.shots_used = total;
  out.kind = task.kind;
  if (opts.clip) {
    out.estimate = clip_spectrum(out.estimate, *opts.clip);
    out.norm_bound_cap = opts.clip;
  }
  return out;
}

// Per-shot records with the same substreams as learn().
inline std::vector<ShotRecord> collect_shots(const LearningTask& task) {
  detail::validate_task(task);
  const int n = log2_exact(static_cast<std::size_t>(task.channel.in_dim()));
  detail::ProbeCache cache(task, n);
  const std::uint64_t size = ensemble_size(task.kind, n);
  std::vector<ShotRecord> records;
  records.reserve(task.shots);
  for (std::uint64_t k = 0; k < task.shots; ++k) {
    Stream rng(task.seed, task.tag, k);
    const std::uint64_t idx = rng.below(size);
    const std::size_t j = sample_cumulative(cache.cdf(idx), rng.uniform());
    records.push_back({idx, static_cast<Eigen::Index>(j), task.observable.eig().values(static_cast<Eigen::Index>(j))});
  }
  return records;
}

// Compensated mean of single-shot estimators in record order.
inline Mat mean_of_records(EnsembleKind kind, int n, const std::vector<ShotRecord>& records) {
  require(!records.empty(), "mean_of_records: no records");
  const Eigen::Index d = Eigen::Index{1} << n;
  CompensatedSum acc(d, d);
  for (const ShotRecord& r : records) acc.add(single_shot_estimator(probe(kind, n, r.probe), r.value));
  return acc.sum() / static_cast<double>(records.size());
}

// ---- sample complexity ----

// Kind-specific constants: σ²·N = ‖O‖²·variance_factor, α·N = ‖O‖·range_factor.
struct BernsteinFactors {
  double variance_factor = 0.0;
  double range_factor = 0.0;
};

inline BernsteinFactors bernstein_factors(EnsembleKind kind, int n) {
  const double d = std::ldexp(1.0, n);
  switch (kind) {
    case EnsembleKind::two_design: return {(d * d + 1.0) * (d + 1.0), d * d + 1.0};
    case EnsembleKind::stabilizer_product: return {std::pow(10.0, n) + 1.0, std::pow(4.0, n) + 1.0};
    case EnsembleKind::pauli_eigenstates: return {std::pow(16.0, n) + 1.0, std::pow(4.0, n) + 1.0};
  }
  return {};
}

inline void check_eps_delta(double eps, double delta) {
  require(eps > 0.0 && eps <= 1.0, "accuracy eps must lie in (0, 1]");
  require(delta > 0.0 && delta <= 1.0, "failure probability delta must lie in (0, 1]");
}

// Matrix Bernstein: Pr[‖mean − E‖ ≥ ε] ≤ d·exp(−(ε²/2)/(σ² + αε/3)).
inline double bernstein_tail(double alpha, double sigma2, double d, double eps) {
  require(alpha >= 0.0 && sigma2 >= 0.0, "bernstein_tail: alpha and sigma2 must be non-negative");
  if (eps == 0.0) return d;
  return d * std::exp(-(eps * eps / 2.0) / (sigma2 + alpha * eps / 3.0));
}

// α and σ² for N shots of the given ensemble on an observable of norm op_norm_o.
inline std::pair<double, double> bernstein_parameters(EnsembleKind kind, int n, double op_norm_o, std::uint64_t shots) {
  const BernsteinFactors f = bernstein_factors(kind, n);
  const double nn = static_cast<double>(shots);
  return {f.range_factor * op_norm_o / nn, f.variance_factor * op_norm_o * op_norm_o / nn};
}

inline double plan_shots_real(EnsembleKind kind, std::size_t d_in, double op_norm_o, double eps, double delta) {
  check_eps_delta(eps, delta);
  require(op_norm_o >= 0.0 && std::isfinite(op_norm_o), "plan_shots: observable norm must be finite and non-negative");
  const int n = log2_exact(d_in);
  const BernsteinFactors f = bernstein_factors(kind, n);
  const double m = std::max(1.0, op_norm_o * op_norm_o);
  const double d = static_cast<double>(d_in);
  return 2.0 * m * (f.variance_factor + (eps / 3.0) * f.range_factor) / (eps * eps) * std::log(d / delta);
}

// Shots sufficient for ‖Ô − Φ†(O)‖∞ ≤ ε with probability ≥ 1 − δ.
inline std::uint64_t plan_shots(EnsembleKind kind, std::size_t d_in, double op_norm_o, double eps, double delta) {
  const double v = plan_shots_real(kind, d_in, op_norm_o, eps, delta);
  return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(v)));
}

}  // namespace knitsim
