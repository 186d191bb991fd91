#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "knitsim/tree.hpp"

namespace knitsim {

// ρ_x = U τ_x U† with τ_x = (I + (−1)^x ε Z̄^{⊗R}) / d^R, U = ⊗_r U_r Haar,
// Z̄ = Z^{⊗n}. With Φ_r = U_r† and O_r = Z̄ the tree value is (−1)^x ε.
struct SeparationInstance {
  int R = 1;
  int n = 1;
  int x = 0;
  double eps = 0.5;
  std::vector<Mat> unitaries;
  DensityOperator state;
};

inline Mat z_bar(int n) { return pauli_string(std::vector<int>(static_cast<std::size_t>(n), 3)); }

inline SeparationInstance make_separation_instance(int R, int n, int x, double eps, std::uint64_t seed) {
  require(R >= 1 && n >= 1, "separation instance: R and n must be at least 1");
  require(x == 0 || x == 1, "separation instance: x must be 0 or 1");
  require(eps > 0.0 && eps <= 1.0, "separation instance: eps must lie in (0, 1]");
  const Eigen::Index d = Eigen::Index{1} << n;
  check_dim(static_cast<std::size_t>(std::pow(static_cast<double>(d), R)), "separation instance");
  SeparationInstance inst;
  inst.R = R;
  inst.n = n;
  inst.x = x;
  inst.eps = eps;
  const Mat zb = z_bar(n);
  std::vector<Mat> zs;
  for (int r = 0; r < R; ++r) {
    Stream rng(seed, stream_tag("separation-unitary"), static_cast<std::uint64_t>(r));
    inst.unitaries.push_back(haar_unitary(d, rng));
    zs.push_back(zb);
  }
  const Mat zz = kron_all(zs);
  const Eigen::Index big = zz.rows();
  const Mat tau = (Mat::Identity(big, big) + (x == 0 ? eps : -eps) * zz) / static_cast<double>(big);
  const Mat u = kron_all(inst.unitaries);
  inst.state = DensityOperator(u * tau * u.adjoint(), DensityOperator::Unchecked{});
  return inst;
}

inline TreeCircuit to_tree(const SeparationInstance& inst) {
  std::map<Path, QuantumChannel> nodes;
  std::map<Path, HermitianOperator> leaves;
  const HermitianOperator zb(z_bar(inst.n));
  for (int r = 0; r < inst.R; ++r) {
    nodes.emplace(Path{r}, QuantumChannel::unitary(inst.unitaries[static_cast<std::size_t>(r)].adjoint()));
    leaves.emplace(Path{r}, zb);
  }
  return TreeCircuit(inst.state, std::move(nodes), std::move(leaves));
}

enum class SeparationMethod { learning, pauli_qpd };

inline std::string to_string(SeparationMethod m) { return m == SeparationMethod::learning ? "learning" : "pauli_qpd"; }

struct SeparationPoint {
  int R = 1;
  SeparationMethod method = SeparationMethod::learning;
  std::uint64_t shots = 0;          // final-measurement shots (learning) or total shots (baseline)
  std::uint64_t total_shots = 0;    // including tomography for the learning method
  int instances = 0;
  int successes = 0;
  double success_rate() const { return instances ? static_cast<double>(successes) / instances : 0.0; }
};

struct SeparationConfig {
  int n = 1;
  double eps = 0.5;
  double delta = 0.1;
  int instances = 20;
  EnsembleKind ensemble = EnsembleKind::two_design;
  int threads = 1;
};

// Learning plan for the discrimination task: estimate the tree value to ε/3.
inline ShotPlan separation_plan(int R, const SeparationConfig& cfg) {
  return allocate(TreeShape::complete(1, R, Eigen::Index{1} << cfg.n), cfg.eps / 3.0, cfg.delta, cfg.ensemble,
                  TwoLayerProtocol::b);
}

// For each shot count: fresh instances with a hidden bit, both methods guess
// x from the sign of their estimate. Learning uses its planned tomography and
// `shots` final-step measurements; the baseline uses `shots` in total.
inline std::vector<SeparationPoint> run_separation(int R, const SeparationConfig& cfg,
                                                   const std::vector<std::uint64_t>& shots_grid, std::uint64_t seed) {
  require(cfg.instances >= 1, "run_separation: need at least one instance");
  std::vector<SeparationPoint> out;
  const ShotPlan base = separation_plan(R, cfg);
  for (std::size_t g = 0; g < shots_grid.size(); ++g) {
    const std::uint64_t shots = shots_grid[g];
    require(shots >= 1, "run_separation: shot counts must be positive");
    SeparationPoint learn_pt{R, SeparationMethod::learning, shots, base.node_shots_total() + shots, cfg.instances, 0};
    SeparationPoint qpd_pt{R, SeparationMethod::pauli_qpd, shots, shots, cfg.instances, 0};
    for (int i = 0; i < cfg.instances; ++i) {
      const std::array<int, 2> key{static_cast<int>(g), i};
      Stream rng(seed, stream_tag("separation", key));
      const int x = rng.coin() ? 1 : 0;
      const std::uint64_t inst_seed = rng.next_u64();
      const TreeCircuit tree = to_tree(make_separation_instance(R, cfg.n, x, cfg.eps, inst_seed));
      ShotPlan plan = base;
      plan.root_shots = shots;
      const TreeRun lr = estimate_tree(tree, plan, rng.next_u64(), {cfg.threads});
      learn_pt.successes += ((lr.estimate < 0.0) ? 1 : 0) == x;
      const QpdRun qr = pauli_qpd_tree_estimate(tree, shots, rng.next_u64());
      qpd_pt.successes += ((qr.estimate < 0.0) ? 1 : 0) == x;
    }
    out.push_back(learn_pt);
    out.push_back(qpd_pt);
  }
  return out;
}

}  // namespace knitsim
