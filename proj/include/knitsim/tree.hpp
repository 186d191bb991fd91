#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "knitsim/channels.hpp"
#include "knitsim/knitting.hpp"
#include "knitsim/tomography.hpp"

namespace knitsim {

// Node address: 0-based child indices from the root, e.g. {0, 1}.
using Path = std::vector<int>;

inline std::string path_to_string(const Path& p) {
  std::string s;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (i) s += '.';
    s += std::to_string(p[i]);
  }
  return s;
}

inline Path parse_path(const std::string& s) {
  Path p;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, '.')) {
    require(!part.empty() && part.find_first_not_of("0123456789") == std::string::npos,
            "malformed node path '" + s + "'");
    p.push_back(std::stoi(part));
  }
  require(!p.empty(), "empty node path");
  return p;
}

inline Path parent_of(const Path& p) { return Path(p.begin(), p.end() - 1); }

inline Path child_of(const Path& p, int k) {
  Path c = p;
  c.push_back(k);
  return c;
}

// Connectivity and wire dimensions of a tree, without channels.
class TreeShape {
 public:
  TreeShape() = default;

  // in_dims: every node's input wire dimension; out_dims: leaf output dims.
  TreeShape(std::map<Path, Eigen::Index> in_dims, std::map<Path, Eigen::Index> leaf_out_dims)
      : in_dims_(std::move(in_dims)), leaf_out_(std::move(leaf_out_dims)) {
    require(!in_dims_.empty(), "tree: no nodes");
    for (const auto& [p, dim] : in_dims_) {
      require(!p.empty(), "tree: empty node path");
      for (int k : p) require(k >= 0, "tree: negative child index in path " + path_to_string(p));
      require(dim >= 2 && is_power_of_two(static_cast<std::size_t>(dim)),
              "tree: wire dimension of node " + path_to_string(p) + " must be a power of two >= 2");
      if (p.size() > 1) require(in_dims_.count(parent_of(p)) == 1, "tree: node " + path_to_string(p) + " has no parent");
      if (p.back() > 0) require(in_dims_.count(sibling_before(p)) == 1, "tree: children of a node must be 0..k-1");
      children_[parent_of(p)].push_back(p);
      depth_ = std::max(depth_, static_cast<int>(p.size()));
      bond_ = std::max(bond_, dim);
    }
    for (auto& [p, kids] : children_) {
      std::sort(kids.begin(), kids.end());
      branching_ = std::max(branching_, static_cast<int>(kids.size()));
    }
    for (const auto& [p, dim] : in_dims_) {
      if (is_leaf(p)) {
        require(leaf_out_.count(p) == 1, "tree: leaf " + path_to_string(p) + " has no observable");
        require(leaf_out_.at(p) >= 1, "tree: leaf output dim must be positive");
        bond_ = std::max(bond_, leaf_out_.at(p));
      } else {
        require(leaf_out_.count(p) == 0, "tree: inner node " + path_to_string(p) + " carries an observable");
      }
    }
    for (const auto& [p, dim] : leaf_out_) require(in_dims_.count(p) == 1, "tree: observable on unknown node " + path_to_string(p));
  }

  // Complete (L, R, d) tree: every inner node has R children, every wire is d-dimensional.
  static TreeShape complete(int L, int R, Eigen::Index d) {
    require(L >= 1 && R >= 1, "complete tree: L and R must be at least 1");
    require(std::pow(static_cast<double>(R), L) <= 1e6, "complete tree: too many nodes");
    std::map<Path, Eigen::Index> in, out;
    std::vector<Path> frontier{Path{}};
    for (int l = 1; l <= L; ++l) {
      std::vector<Path> next;
      for (const Path& p : frontier)
        for (int k = 0; k < R; ++k) {
          next.push_back(child_of(p, k));
          in[next.back()] = d;
        }
      frontier.swap(next);
    }
    for (const Path& p : frontier) out[p] = d;
    return TreeShape(std::move(in), std::move(out));
  }

  int L() const { return depth_; }
  int R() const { return branching_; }
  Eigen::Index d() const { return bond_; }

  const std::map<Path, Eigen::Index>& in_dims() const { return in_dims_; }
  Eigen::Index in_dim(const Path& p) const { return in_dims_.at(p); }
  Eigen::Index leaf_out_dim(const Path& p) const { return leaf_out_.at(p); }

  bool contains(const Path& p) const { return in_dims_.count(p) == 1; }
  bool is_leaf(const Path& p) const { return children_.count(p) == 0; }

  const std::vector<Path>& children(const Path& p) const {
    static const std::vector<Path> none;
    auto it = children_.find(p);
    return it == children_.end() ? none : it->second;
  }

  // Input dimension a node's channel must map onto its children (or the leaf observable).
  Eigen::Index out_dim(const Path& p) const {
    if (is_leaf(p)) return leaf_out_.at(p);
    Eigen::Index prod = 1;
    for (const Path& c : children(p)) prod *= in_dims_.at(c);
    return prod;
  }

  Eigen::Index root_dim() const { return out_dim(Path{}); }

  std::vector<Path> at_depth(int l) const {
    std::vector<Path> out;
    for (const auto& [p, dim] : in_dims_)
      if (static_cast<int>(p.size()) == l) out.push_back(p);
    return out;
  }

  std::size_t node_count() const { return in_dims_.size(); }

 private:
  static Path sibling_before(const Path& p) {
    Path s = p;
    --s.back();
    return s;
  }

  std::map<Path, Eigen::Index> in_dims_;
  std::map<Path, Eigen::Index> leaf_out_;
  std::map<Path, std::vector<Path>> children_;
  int depth_ = 0;
  int branching_ = 0;
  Eigen::Index bond_ = 0;
};

inline constexpr double kObservableNormTol = 1e-12;

// Rooted tree of channels: ρ feeds the root's children; each inner node's
// output splits into its children's inputs (first child most significant);
// leaves are measured with their observables.
class TreeCircuit {
 public:
  TreeCircuit() = default;

  TreeCircuit(DensityOperator root_state, std::map<Path, QuantumChannel> nodes,
              std::map<Path, HermitianOperator> leaf_observables)
      : root_(std::move(root_state)), nodes_(std::move(nodes)), leaves_(std::move(leaf_observables)) {
    std::map<Path, Eigen::Index> in, out;
    for (const auto& [p, ch] : nodes_) in[p] = ch.in_dim();
    for (const auto& [p, o] : leaves_) out[p] = o.dim();
    shape_ = TreeShape(std::move(in), std::move(out));
    require(root_.dim() == shape_.root_dim(), "tree: root state dim must equal the product of the root children's inputs");
    for (const auto& [p, ch] : nodes_) {
      require(ch.out_dim() == shape_.out_dim(p), "tree: node " + path_to_string(p) + " output dim does not match its children");
    }
    for (const auto& [p, o] : leaves_) {
      require(o.norm() <= 1.0 + kObservableNormTol, "tree: leaf observable " + path_to_string(p) + " has norm above 1");
    }
  }

  const TreeShape& shape() const { return shape_; }
  const DensityOperator& root_state() const { return root_; }
  const std::map<Path, QuantumChannel>& nodes() const { return nodes_; }
  const QuantumChannel& channel(const Path& p) const { return nodes_.at(p); }
  const HermitianOperator& observable(const Path& p) const { return leaves_.at(p); }
  const std::map<Path, HermitianOperator>& leaf_observables() const { return leaves_; }

  int L() const { return shape_.L(); }
  int R() const { return shape_.R(); }
  Eigen::Index d() const { return shape_.d(); }

 private:
  DensityOperator root_;
  std::map<Path, QuantumChannel> nodes_;
  std::map<Path, HermitianOperator> leaves_;
  TreeShape shape_;
};

// Complete random (L, R, d) tree: Haar-dilated channels with `ancilla_qubits`
// ancillas, random pure root state, random non-identity Pauli leaf observables.
inline TreeCircuit random_tree(int L, int R, Eigen::Index d, std::uint64_t seed, int ancilla_qubits = 1) {
  const TreeShape shape = TreeShape::complete(L, R, d);
  std::map<Path, QuantumChannel> nodes;
  std::map<Path, HermitianOperator> leaves;
  const int n = log2_exact(static_cast<std::size_t>(d));
  for (const auto& [p, dim] : shape.in_dims()) {
    Stream rng(seed, stream_tag("random-tree", p));
    nodes.emplace(p, QuantumChannel::random(dim, shape.out_dim(p), ancilla_qubits, rng));
    if (shape.is_leaf(p)) {
      const std::uint64_t idx = 1 + rng.below((std::uint64_t{1} << (2 * n)) - 1);
      leaves.emplace(p, HermitianOperator(pauli_string(pauli_digits(idx, n))));
    }
  }
  Stream rng(seed, stream_tag("random-tree-root"));
  return TreeCircuit(DensityOperator::pure(random_pure_state(shape.root_dim(), rng)), std::move(nodes),
                     std::move(leaves));
}

// ---- shot allocation ----

enum class TwoLayerProtocol { a, b };

inline std::string to_string(TwoLayerProtocol p) { return p == TwoLayerProtocol::a ? "a" : "b"; }

enum class AllocationScheme { two_layer_a, two_layer_b, multi_layer, chain };

inline std::string to_string(AllocationScheme s) {
  switch (s) {
    case AllocationScheme::two_layer_a: return "two_layer_a";
    case AllocationScheme::two_layer_b: return "two_layer_b";
    case AllocationScheme::multi_layer: return "multi_layer";
    case AllocationScheme::chain: return "chain";
  }
  return "?";
}

struct NodePlan {
  std::uint64_t shots = 0;
  double accuracy = 0.0;    // operator-norm target for the learned observable
  double budget = 0.0;      // failure probability
  double input_norm = 1.0;  // bound on ‖input observable‖∞ used by the planner
};

struct ShotPlan {
  AllocationScheme scheme = AllocationScheme::multi_layer;
  EnsembleKind ensemble = EnsembleKind::two_design;
  double eps = 0.0, delta = 0.0;
  int L = 0, R = 0;
  std::map<Path, NodePlan> nodes;
  std::uint64_t root_shots = 0;  // N₀
  double root_accuracy = 0.0;    // Hoeffding deviation allowed in the final step
  double root_budget = 0.0;
  double root_range = 1.0;       // bound on |single-shot output| used for N₀
  std::vector<double> per_depth_accuracy;  // ε_l, l = 1..L
  std::vector<double> per_depth_budget;    // δ_l, l = 1..L
  double slack_budget = 0.0;               // unallocated part of δ

  std::uint64_t node_shots_total() const {
    std::uint64_t s = 0;
    for (const auto& [p, np] : nodes) s += np.shots;
    return s;
  }
  std::uint64_t total_shots() const { return node_shots_total() + root_shots; }

  double allocated_budget() const {
    double s = root_budget + slack_budget;
    for (const auto& [p, np] : nodes) s += np.budget;
    return s;
  }
};

inline std::uint64_t hoeffding_count(double range, double deviation, double failure) {
  // 2 exp(−N t² / (2 range²)) ≤ failure.
  return static_cast<std::uint64_t>(std::ceil(2.0 * range * range * std::log(2.0 / failure) / (deviation * deviation)));
}

inline ShotPlan allocate(const TreeShape& shape, double eps, double delta, EnsembleKind kind,
                         TwoLayerProtocol protocol = TwoLayerProtocol::b) {
  check_eps_delta(eps, delta);
  const double e1 = std::numbers::e - 1.0;
  ShotPlan plan;
  plan.ensemble = kind;
  plan.eps = eps;
  plan.delta = delta;
  plan.L = shape.L();
  plan.R = shape.R();
  const int L = plan.L, R = plan.R;

  auto plan_node = [&](const Path& p, double acc, double budget, double norm) {
    NodePlan np;
    np.accuracy = acc;
    np.budget = budget;
    np.input_norm = norm;
    np.shots = plan_shots(kind, static_cast<std::size_t>(shape.in_dim(p)), norm, acc, budget);
    plan.nodes[p] = np;
  };

  if (L == 1) {
    // Two-layer: R leaf learners and the final estimate share δ equally.
    const double share = delta / (R + 1);
    const double acc = protocol == TwoLayerProtocol::b ? eps / (2.0 * R * e1) : eps / (4.0 * R);
    plan.scheme = protocol == TwoLayerProtocol::b ? AllocationScheme::two_layer_b : AllocationScheme::two_layer_a;
    for (const Path& p : shape.at_depth(1)) plan_node(p, acc, share, 1.0);
    plan.root_budget = share;
    plan.root_accuracy = eps / 2.0;
    plan.root_range = protocol == TwoLayerProtocol::b ? 1.5 : 1.0;
    plan.root_shots = hoeffding_count(plan.root_range, plan.root_accuracy, share);
    plan.per_depth_accuracy = {acc};
    plan.per_depth_budget = {share};
  } else if (R == 1) {
    // Chain: ε_l = ε/(2L), δ_l = δ/(2(L+1)), inner inputs bounded by 3/2.
    plan.scheme = AllocationScheme::chain;
    const double acc = eps / (2.0 * L), budget = delta / (2.0 * (L + 1));
    for (int l = 1; l <= L; ++l) {
      for (const Path& p : shape.at_depth(l)) plan_node(p, acc, budget, shape.is_leaf(p) ? 1.0 : 1.5);
      plan.per_depth_accuracy.push_back(acc);
      plan.per_depth_budget.push_back(budget);
    }
    plan.root_budget = delta / 2.0;
    plan.root_accuracy = eps / 2.0;
    plan.root_range = 1.5;
    plan.root_shots = hoeffding_count(plan.root_range, plan.root_accuracy, plan.root_budget);
  } else {
    // Multi-layer: ε_l = ε/((2R)^l (e−1) L), δ_l = δ/(2 Σ_t R^t), inner inputs bounded by 2.
    plan.scheme = AllocationScheme::multi_layer;
    double denom = 0.0;
    for (int t = 1; t <= L; ++t) denom += std::pow(static_cast<double>(R), t);
    const double budget = delta / (2.0 * denom);
    for (int l = 1; l <= L; ++l) {
      const double acc = eps / (std::pow(2.0 * R, l) * e1 * L);
      for (const Path& p : shape.at_depth(l)) plan_node(p, acc, budget, shape.is_leaf(p) ? 1.0 : 2.0);
      plan.per_depth_accuracy.push_back(acc);
      plan.per_depth_budget.push_back(budget);
    }
    plan.root_budget = delta / 2.0;
    plan.root_accuracy = eps / 2.0;
    plan.root_range = 2.0;
    plan.root_shots = hoeffding_count(plan.root_range, plan.root_accuracy, plan.root_budget);
  }
  double used = plan.root_budget;
  for (const auto& [p, np] : plan.nodes) used += np.budget;
  plan.slack_budget = delta - used > 1e-12 * delta ? delta - used : 0.0;  // drop rounding residue
  return plan;
}

inline ShotPlan allocate(const TreeCircuit& tree, double eps, double delta, EnsembleKind kind,
                         TwoLayerProtocol protocol = TwoLayerProtocol::b) {
  return allocate(tree.shape(), eps, delta, kind, protocol);
}

// Hoeffding shot count of a quasiprobability simulation with K cuts of weight γ:
// single-shot range ±γ^K, N = 2 γ^{2K} ln(2/δ) / ε².
inline double qpd_hoeffding_count(double gamma, int cuts, double eps, double delta) {
  check_eps_delta(eps, delta);
  return std::ceil(2.0 * std::pow(gamma, 2.0 * cuts) * std::log(2.0 / delta) / (eps * eps));
}

// ---- estimation ----

struct TreeRun {
  double estimate = 0.0;
  std::map<Path, HermitianOperator> learned;  // M̃ per node
  std::map<Path, HermitianOperator> inputs;   // observable each node was learned against
  std::uint64_t node_shots = 0;
  std::uint64_t root_shots = 0;
  std::uint64_t total_shots = 0;
  double max_abs_output = 0.0;  // largest |single-shot output| among the final-step shots
};

struct EstimateOptions {
  int threads = 1;
};

namespace detail {

inline void check_plan(const TreeShape& shape, const ShotPlan& plan) {
  require(plan.nodes.size() == shape.node_count(), "plan does not match the tree (node count)");
  for (const auto& [p, dim] : shape.in_dims()) require(plan.nodes.count(p) == 1, "plan has no entry for node " + path_to_string(p));
  require(plan.root_shots >= 1, "plan has no final-step shots");
}

// Learn M̃ for every node, leaves first.
inline void learn_all(const TreeCircuit& tree, const ShotPlan& plan, std::uint64_t seed, const EstimateOptions& opts,
                      TreeRun& run) {
  const TreeShape& shape = tree.shape();
  for (int l = shape.L(); l >= 1; --l) {
    for (const Path& p : shape.at_depth(l)) {
      HermitianOperator input;
      if (shape.is_leaf(p)) {
        input = tree.observable(p);
      } else {
        std::vector<Mat> factors;
        for (const Path& c : shape.children(p)) factors.push_back(run.learned.at(c).matrix());
        input = HermitianOperator(hermitian_part(kron_all(factors)));
      }
      LearningTask task{tree.channel(p), input, plan.ensemble, plan.nodes.at(p).shots, seed, stream_tag("tree", p)};
      run.learned[p] = learn(task, {opts.threads, std::nullopt}).estimate;
      run.inputs[p] = input;
      run.node_shots += task.shots;
    }
  }
}

// Samples `shots` outcomes from probabilities p and returns the mean of
// values[outcome] (compensated), tracking the largest |value| observed.
inline double sample_mean(const std::vector<double>& p, const std::vector<double>& values, std::uint64_t shots,
                          std::uint64_t seed, std::uint64_t tag, double& max_abs) {
  const auto cdf = cumulative(p);
  std::vector<std::uint64_t> counts(p.size(), 0);
  for (std::uint64_t k = 0; k < shots; ++k) {
    Stream rng(seed, tag, k);
    ++counts[sample_cumulative(cdf, rng.uniform())];
  }
  double sum = 0.0, comp = 0.0;
  for (std::size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] == 0) continue;
    max_abs = std::max(max_abs, std::abs(values[j]));
    const double y = static_cast<double>(counts[j]) * values[j] - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return sum / static_cast<double>(shots);
}

}  // namespace detail

// Learn effective observables leaf to root, then measure ρ in
// the product eigenbasis of the root children's M̃ and weight by Π λ̃.
// Also covers two-layer protocol (b) (L = 1) and the chain (R = 1).
inline TreeRun estimate_tree(const TreeCircuit& tree, const ShotPlan& plan, std::uint64_t seed,
                             const EstimateOptions& opts = {}) {
  const TreeShape& shape = tree.shape();
  detail::check_plan(shape, plan);
  require(plan.scheme != AllocationScheme::two_layer_a, "estimate_tree: protocol (a) plans need estimate_two_layer");
  TreeRun run;
  detail::learn_all(tree, plan, seed, opts, run);

  std::vector<Mat> bases;
  std::vector<RVec> weights;
  for (const Path& p : shape.children(Path{})) {
    bases.push_back(run.learned.at(p).eig().vectors);
    weights.push_back(run.learned.at(p).eig().values);
  }
  const Mat w = kron_all(bases);
  const std::vector<double> probs = probabilities_in_basis(w, tree.root_state().matrix());
  std::vector<double> values(probs.size(), 1.0);
  for (std::size_t j = 0; j < values.size(); ++j) {
    std::size_t rest = j;
    for (std::size_t k = weights.size(); k-- > 0;) {
      const auto dk = static_cast<std::size_t>(weights[k].size());
      values[j] *= weights[k](static_cast<Eigen::Index>(rest % dk));
      rest /= dk;
    }
  }
  run.root_shots = plan.root_shots;
  run.estimate = detail::sample_mean(probs, values, plan.root_shots, seed, stream_tag("tree-final"), run.max_abs_output);
  run.total_shots = run.node_shots + run.root_shots;
  return run;
}

// Two-layer protocols. (b) is estimate_tree; (a) pinches ρ in each Ṽ_k,
// runs the leaf channels and measures ⊗O_k (outputs in [−1, 1]).
inline TreeRun estimate_two_layer(const TreeCircuit& tree, const ShotPlan& plan, TwoLayerProtocol protocol,
                                  std::uint64_t seed, const EstimateOptions& opts = {}) {
  require(tree.L() == 1, "estimate_two_layer: tree must have L = 1");
  if (protocol == TwoLayerProtocol::b) return estimate_tree(tree, plan, seed, opts);
  const TreeShape& shape = tree.shape();
  detail::check_plan(shape, plan);
  TreeRun run;
  detail::learn_all(tree, plan, seed, opts, run);

  const std::vector<Path>& kids = shape.children(Path{});
  std::vector<std::size_t> dims;
  for (const Path& p : kids) dims.push_back(static_cast<std::size_t>(shape.in_dim(p)));
  Mat state = tree.root_state().matrix();
  std::vector<Mat> meas_bases;
  std::vector<RVec> meas_values;
  for (std::size_t k = 0; k < kids.size(); ++k) {
    const QuantumChannel pinch = to_channel(approx_cut(run.learned.at(kids[k]), CutMode::channel).mp);
    state = apply_on_subsystem(pinch, state, dims, k);
    state = apply_on_subsystem(tree.channel(kids[k]), state, dims, k);
    dims[k] = static_cast<std::size_t>(tree.channel(kids[k]).out_dim());
    meas_bases.push_back(tree.observable(kids[k]).eig().vectors);
    meas_values.push_back(tree.observable(kids[k]).eig().values);
  }
  const std::vector<double> probs = probabilities_in_basis(kron_all(meas_bases), state);
  std::vector<double> values(probs.size(), 1.0);
  for (std::size_t j = 0; j < values.size(); ++j) {
    std::size_t rest = j;
    for (std::size_t k = meas_values.size(); k-- > 0;) {
      const auto dk = static_cast<std::size_t>(meas_values[k].size());
      values[j] *= meas_values[k](static_cast<Eigen::Index>(rest % dk));
      rest /= dk;
    }
  }
  run.root_shots = plan.root_shots;
  run.estimate = detail::sample_mean(probs, values, plan.root_shots, seed, stream_tag("tree-final-a"), run.max_abs_output);
  run.total_shots = run.node_shots + run.root_shots;
  return run;
}

// ---- conventional baseline ----

struct QpdRun {
  double estimate = 0.0;
  std::uint64_t shots = 0;
  double max_abs_output = 0.0;
};

// Pauli quasiprobability cut on every wire of a two-layer tree: per shot,
// uniform Pauli P_k per wire, joint measurement of ρ in ⊗ eigenbases (signs
// c_k), uniform eigenstate preparation (signs c'_k) into Φ_k, measurement of
// O_k; output Π_k 4^{n_k} c_k c'_k ν_k.
inline QpdRun pauli_qpd_tree_estimate(const TreeCircuit& tree, std::uint64_t shots, std::uint64_t seed) {
  require(tree.L() == 1, "pauli_qpd_tree_estimate: tree must have L = 1");
  require(shots >= 1, "pauli_qpd_tree_estimate: shots must be at least 1");
  const TreeShape& shape = tree.shape();
  const std::vector<Path>& kids = shape.children(Path{});
  const std::size_t r = kids.size();
  std::vector<int> nq(r);
  int total_q = 0;
  for (std::size_t k = 0; k < r; ++k) {
    nq[k] = log2_exact(static_cast<std::size_t>(shape.in_dim(kids[k])));
    total_q += nq[k];
  }
  require(total_q <= 10, "pauli_qpd_tree_estimate: too many cut qubits");
  const std::vector<QpdWireCut> cuts = [&] {
    std::vector<QpdWireCut> c;
    for (int n : nq) c.push_back(pauli_qpd_cut(n));
    return c;
  }();

  // Joint measurement tables per Pauli tuple (index over all cut qubits).
  struct Joint {
    std::vector<double> cdf;
    std::vector<int> signs;  // per joint outcome: Π_k c_k
  };
  std::map<std::uint64_t, Joint> joint_cache;
  // Downstream tables per (wire, Pauli on wire, prepared eigenstate).
  std::map<std::tuple<std::size_t, std::uint64_t, Eigen::Index>, std::pair<std::vector<double>, int>> down_cache;

  auto joint_table = [&](std::uint64_t pidx) -> const Joint& {
    auto it = joint_cache.find(pidx);
    if (it != joint_cache.end()) return it->second;
    const std::vector<int> digits = pauli_digits(pidx, total_q);
    std::vector<int> signs;
    const Mat w = pauli_eigenbasis(digits, &signs);
    Joint j{cumulative(probabilities_in_basis(w, tree.root_state().matrix())), signs};
    return joint_cache.emplace(pidx, std::move(j)).first->second;
  };
  auto down_table = [&](std::size_t k, std::uint64_t pk, Eigen::Index e) -> const std::pair<std::vector<double>, int>& {
    const auto key = std::make_tuple(k, pk, e);
    auto it = down_cache.find(key);
    if (it != down_cache.end()) return it->second;
    std::vector<int> signs;
    const Mat w = pauli_eigenbasis(pauli_digits(pk, nq[k]), &signs);
    const Vec v = w.col(e);
    const Mat out = knitsim::apply(tree.channel(kids[k]), Mat(v * v.adjoint()));
    const HermitianOperator& o = tree.observable(kids[k]);
    auto entry = std::make_pair(cumulative(probabilities_in_basis(o.eig().vectors, out)), signs[static_cast<std::size_t>(e)]);
    return down_cache.emplace(key, std::move(entry)).first->second;
  };

  double gamma_total = 1.0;
  for (const auto& c : cuts) gamma_total *= c.gamma;
  QpdRun run;
  run.shots = shots;
  double sum = 0.0, comp = 0.0;
  const std::uint64_t tag = stream_tag("pauli-qpd");
  for (std::uint64_t s = 0; s < shots; ++s) {
    Stream rng(seed, tag, s);
    const std::uint64_t pidx = rng.below(std::uint64_t{1} << (2 * total_q));
    const Joint& jt = joint_table(pidx);
    const std::size_t e = sample_cumulative(jt.cdf, rng.uniform());
    double value = gamma_total * jt.signs[e];
    int shift = 2 * total_q;
    for (std::size_t k = 0; k < r; ++k) {
      shift -= 2 * nq[k];
      const std::uint64_t pk = (pidx >> shift) & ((std::uint64_t{1} << (2 * nq[k])) - 1);
      const auto prep = static_cast<Eigen::Index>(rng.below(std::uint64_t{1} << nq[k]));
      const auto& [cdf, sign] = down_table(k, pk, prep);
      const std::size_t j = sample_cumulative(cdf, rng.uniform());
      value *= sign * tree.observable(kids[k]).eig().values(static_cast<Eigen::Index>(j));
    }
    run.max_abs_output = std::max(run.max_abs_output, std::abs(value));
    const double y = value - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  run.estimate = sum / static_cast<double>(shots);
  return run;
}

}  // namespace knitsim
