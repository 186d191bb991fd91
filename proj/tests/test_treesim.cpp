#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "knitsim/oracle.hpp"
#include "knitsim/separation.hpp"

using namespace knitsim;

namespace {

DensityOperator zero_state(Eigen::Index d) { return DensityOperator::pure(basis_vector(d, 0)); }

// |i⟩ → |i⟩|i⟩ on a d-dimensional wire.
QuantumChannel fanout(Eigen::Index d) {
  Mat v = Mat::Zero(d * d, d);
  for (Eigen::Index i = 0; i < d; ++i) v(i * d + i, i) = 1.0;
  return QuantumChannel::from_isometry(v, d * d);
}

// Complete (L, 2, 2) tree of fan-outs and identity leaves, Z on every leaf, ρ = |00⟩⟨00|.
TreeCircuit copy_tree(int L) {
  const TreeShape shape = TreeShape::complete(L, 2, 2);
  std::map<Path, QuantumChannel> nodes;
  std::map<Path, HermitianOperator> leaves;
  for (const auto& [p, dim] : shape.in_dims()) {
    if (shape.is_leaf(p)) {
      nodes.emplace(p, QuantumChannel::identity(2));
      leaves.emplace(p, HermitianOperator(pauli(3)));
    } else {
      nodes.emplace(p, fanout(2));
    }
  }
  return TreeCircuit(zero_state(4), std::move(nodes), std::move(leaves));
}

}  // namespace

TEST_CASE("path helpers") {
  CHECK(path_to_string({0, 1, 2}) == "0.1.2");
  CHECK(parse_path("3.0") == Path{3, 0});
  CHECK(parent_of({1, 2}) == Path{1});
  CHECK(child_of({1}, 0) == Path{1, 0});
  CHECK_THROWS_AS(parse_path(""), InvalidInput);
  CHECK_THROWS_AS(parse_path("1..2"), InvalidInput);
  CHECK_THROWS_AS(parse_path("a"), InvalidInput);
}

TEST_CASE("tree shape validation") {
  const TreeShape s = TreeShape::complete(2, 3, 2);
  CHECK(s.L() == 2);
  CHECK(s.R() == 3);
  CHECK(s.d() == 2);
  CHECK(s.node_count() == 12);
  CHECK(s.root_dim() == 8);
  CHECK(s.out_dim({1}) == 8);
  CHECK(s.children({1}).size() == 3);
  CHECK(s.at_depth(2).size() == 9);
  // Gap in child indices.
  CHECK_THROWS_AS(TreeShape({{{0}, 2}, {{2}, 2}}, {{{0}, 2}, {{2}, 2}}), InvalidInput);
  // Orphan.
  CHECK_THROWS_AS(TreeShape({{{0}, 2}, {{1, 0}, 2}}, {{{0}, 2}, {{1, 0}, 2}}), InvalidInput);
  // Non power of two.
  CHECK_THROWS_AS(TreeShape({{{0}, 3}}, {{{0}, 3}}), InvalidInput);
  // Leaf without observable, inner node with one.
  CHECK_THROWS_AS(TreeShape({{{0}, 2}, {{1}, 2}}, {{{0}, 2}}), InvalidInput);
  CHECK_THROWS_AS(TreeShape({{{0}, 2}, {{0, 0}, 2}}, {{{0}, 2}, {{0, 0}, 2}}), InvalidInput);
}

TEST_CASE("tree circuit validation") {
  std::map<Path, QuantumChannel> nodes{{{0}, QuantumChannel::identity(2)}, {{1}, QuantumChannel::identity(2)}};
  std::map<Path, HermitianOperator> leaves{{{0}, HermitianOperator(pauli(3))}, {{1}, HermitianOperator(pauli(3))}};
  CHECK_NOTHROW(TreeCircuit(zero_state(4), nodes, leaves));
  CHECK_THROWS_AS(TreeCircuit(zero_state(2), nodes, leaves), InvalidInput);
  auto big = leaves;
  big.at({1}) = HermitianOperator(Mat(2.0 * pauli(3)));
  CHECK_THROWS_AS(TreeCircuit(zero_state(4), nodes, big), InvalidInput);
  auto wrong = nodes;
  wrong.at({0}) = fanout(2);
  CHECK_THROWS_AS(TreeCircuit(zero_state(4), wrong, leaves), InvalidInput);
}

TEST_CASE("exact expectation examples") {
  std::map<Path, QuantumChannel> nodes{{{0}, QuantumChannel::identity(2)}, {{1}, QuantumChannel::identity(2)}};
  std::map<Path, HermitianOperator> zz{{{0}, HermitianOperator(pauli(3))}, {{1}, HermitianOperator(pauli(3))}};
  CHECK(exact_expectation(TreeCircuit(zero_state(4), nodes, zz)) == Catch::Approx(1.0).margin(1e-14));
  std::map<Path, HermitianOperator> xz{{{0}, HermitianOperator(pauli(1))}, {{1}, HermitianOperator(pauli(3))}};
  CHECK(std::abs(exact_expectation(TreeCircuit(zero_state(4), nodes, xz))) <= 1e-14);
  CHECK(exact_expectation(copy_tree(2)) == Catch::Approx(1.0).margin(1e-14));
}

TEST_CASE("Heisenberg and Schrodinger pictures agree") {
  const std::vector<std::array<int, 3>> shapes{{1, 1, 2}, {1, 2, 2}, {1, 3, 2}, {2, 2, 2}, {3, 1, 2},
                                               {2, 1, 4}, {1, 2, 4}, {2, 3, 2}, {3, 2, 2}};
  for (const auto& [L, R, d] : shapes) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const TreeCircuit t = random_tree(L, R, d, seed);
      CHECK(std::abs(exact_expectation(t) - schrodinger_expectation(t)) <= 1e-10);
    }
  }
  SECTION("non-uniform tree") {
    // Root children: 0 (leaf, 4-dim), 1 (inner with two 2-dim leaves).
    Stream rng(11, stream_tag("non-uniform"));
    std::map<Path, QuantumChannel> nodes{{{0}, QuantumChannel::random(4, 4, 1, rng)},
                                         {{1}, QuantumChannel::random(2, 4, 1, rng)},
                                         {{1, 0}, QuantumChannel::random(2, 2, 1, rng)},
                                         {{1, 1}, QuantumChannel::random(2, 2, 1, rng)}};
    std::map<Path, HermitianOperator> leaves{{{0}, HermitianOperator(pauli_string("XZ"))},
                                             {{1, 0}, HermitianOperator(pauli(2))},
                                             {{1, 1}, HermitianOperator(pauli(1))}};
    const TreeCircuit t(random_density(8, rng), nodes, leaves);
    CHECK(t.L() == 2);
    CHECK(t.d() == 4);
    CHECK(std::abs(exact_expectation(t) - schrodinger_expectation(t)) <= 1e-10);
  }
}

TEST_CASE("allocation formulas") {
  const double e1 = std::numbers::e - 1.0;
  const double eps = 0.2, delta = 0.1;
  SECTION("two-layer") {
    const ShotPlan b = allocate(TreeShape::complete(1, 2, 2), eps, delta, EnsembleKind::two_design);
    CHECK(b.scheme == AllocationScheme::two_layer_b);
    CHECK(b.per_depth_accuracy[0] == Catch::Approx(eps / (4 * e1)));
    CHECK(b.root_shots == std::uint64_t(std::ceil(18.0 * std::log(2.0 * 3 / delta) / (eps * eps))));
    CHECK(b.nodes.at({0}).budget == Catch::Approx(delta / 3));
    CHECK(b.nodes.at({0}).shots == plan_shots(EnsembleKind::two_design, 2, 1.0, eps / (4 * e1), delta / 3));
    const ShotPlan a = allocate(TreeShape::complete(1, 2, 2), eps, delta, EnsembleKind::two_design, TwoLayerProtocol::a);
    CHECK(a.scheme == AllocationScheme::two_layer_a);
    CHECK(a.per_depth_accuracy[0] == Catch::Approx(eps / 8));
    CHECK(a.root_shots == std::uint64_t(std::ceil(8.0 * std::log(2.0 * 3 / delta) / (eps * eps))));
  }
  SECTION("multi-layer") {
    const ShotPlan p = allocate(TreeShape::complete(2, 2, 2), eps, delta, EnsembleKind::two_design);
    CHECK(p.scheme == AllocationScheme::multi_layer);
    CHECK(p.per_depth_accuracy[0] == Catch::Approx(eps / (4 * e1 * 2)));
    CHECK(p.per_depth_accuracy[1] == Catch::Approx(eps / (16 * e1 * 2)));
    CHECK(p.per_depth_budget[0] == Catch::Approx(delta / 12));
    CHECK(p.nodes.at({0}).input_norm == 2.0);
    CHECK(p.nodes.at({0, 1}).input_norm == 1.0);
    CHECK(p.root_shots == std::uint64_t(std::ceil(32.0 * std::log(4.0 / delta) / (eps * eps))));
  }
  SECTION("chain") {
    const ShotPlan p = allocate(TreeShape::complete(3, 1, 2), eps, delta, EnsembleKind::two_design);
    CHECK(p.scheme == AllocationScheme::chain);
    for (double a : p.per_depth_accuracy) CHECK(a == Catch::Approx(eps / 6));
    CHECK(p.nodes.at({0}).input_norm == 1.5);
    CHECK(p.nodes.at({0, 0, 0}).input_norm == 1.0);
    CHECK(p.slack_budget == Catch::Approx(delta / 8));
  }
  SECTION("budgets sum to delta") {
    for (const auto& [L, R] : std::vector<std::pair<int, int>>{{1, 1}, {1, 3}, {2, 2}, {3, 1}, {3, 2}, {2, 4}}) {
      const ShotPlan p = allocate(TreeShape::complete(L, R, 2), eps, delta, EnsembleKind::stabilizer_product);
      CHECK(std::abs(p.allocated_budget() - delta) <= 1e-15);
      CHECK(p.total_shots() == p.node_shots_total() + p.root_shots);
    }
  }
  SECTION("monotone in eps") {
    const TreeShape s = TreeShape::complete(2, 2, 2);
    ShotPlan prev = allocate(s, 0.05, delta, EnsembleKind::two_design);
    for (double e = 0.06; e <= 1.0; e += 0.05) {
      const ShotPlan cur = allocate(s, e, delta, EnsembleKind::two_design);
      for (const auto& [p, np] : cur.nodes) CHECK(np.shots <= prev.nodes.at(p).shots);
      CHECK(cur.root_shots <= prev.root_shots);
      prev = cur;
    }
  }
  SECTION("invalid inputs") {
    CHECK_THROWS_AS(allocate(TreeShape::complete(1, 2, 2), 0.0, delta, EnsembleKind::two_design), InvalidInput);
    CHECK_THROWS_AS(allocate(TreeShape::complete(1, 2, 2), eps, 1.5, EnsembleKind::two_design), InvalidInput);
  }
}

TEST_CASE("estimates on copy trees") {
  const TreeCircuit t = copy_tree(2);
  const ShotPlan plan = allocate(t, 0.5, 0.1, EnsembleKind::two_design);
  const TreeRun run = estimate_tree(t, plan, 3);
  CHECK(std::abs(run.estimate - 1.0) <= 0.5);
  CHECK(run.total_shots == plan.total_shots());
  CHECK(run.node_shots == plan.node_shots_total());
  CHECK(run.learned.size() == 6);
  const auto x = depth_deviations(t.shape(), node_deviations(t, run));
  if (good_tomography(plan, local_errors(t, run))) CHECK(error_recursion_holds(plan, x));
}

TEST_CASE("two-layer protocols") {
  const double eps = 0.3, delta = 0.1;
  int ok_a = 0, ok_b = 0;
  for (std::uint64_t trial = 0; trial < 4; ++trial) {
    const TreeCircuit t = random_tree(1, 2, 2, derive_seed(19, "two-layer-tree", trial));
    const double exact = exact_expectation(t);
    const ShotPlan pb = allocate(t, eps, delta, EnsembleKind::two_design);
    const TreeRun rb = estimate_two_layer(t, pb, TwoLayerProtocol::b, derive_seed(19, "two-layer-run", trial));
    ok_b += std::abs(rb.estimate - exact) <= eps;
    if (good_tomography(pb, local_errors(t, rb))) CHECK(rb.max_abs_output <= 1.5 + 1e-9);
    const ShotPlan pa = allocate(t, eps, delta, EnsembleKind::two_design, TwoLayerProtocol::a);
    const TreeRun ra = estimate_two_layer(t, pa, TwoLayerProtocol::a, derive_seed(19, "two-layer-run", trial));
    ok_a += std::abs(ra.estimate - exact) <= eps;
    CHECK(ra.max_abs_output <= 1.0 + 1e-12);
    CHECK(ra.total_shots == pa.total_shots());
    CHECK_THROWS_AS(estimate_tree(t, pa, 1), InvalidInput);
  }
  CHECK(ok_a >= 3);
  CHECK(ok_b >= 3);
  CHECK_THROWS_AS(estimate_two_layer(copy_tree(2), allocate(copy_tree(2), eps, delta, EnsembleKind::two_design),
                                     TwoLayerProtocol::b, 1),
                  InvalidInput);
}

TEST_CASE("chain estimate") {
  const TreeCircuit t = random_tree(3, 1, 2, 29);
  const ShotPlan plan = allocate(t, 0.3, 0.1, EnsembleKind::two_design);
  const TreeRun run = estimate_tree(t, plan, 31);
  CHECK(std::abs(run.estimate - exact_expectation(t)) <= 0.3);
  const auto x = depth_deviations(t.shape(), node_deviations(t, run));
  if (good_tomography(plan, local_errors(t, run))) CHECK(error_recursion_holds(plan, x));
}

TEST_CASE("estimation is reproducible and thread-invariant") {
  const TreeCircuit t = random_tree(1, 2, 2, 37);
  const ShotPlan plan = allocate(t, 0.4, 0.1, EnsembleKind::stabilizer_product);
  const double a = estimate_tree(t, plan, 41).estimate;
  const double b = estimate_tree(t, plan, 41, {3}).estimate;
  const double c = estimate_tree(t, plan, 42).estimate;
  CHECK(a == b);
  CHECK(a != c);
}

TEST_CASE("plan and tree mismatch") {
  const TreeCircuit t = random_tree(1, 2, 2, 43);
  const ShotPlan other = allocate(TreeShape::complete(1, 3, 2), 0.3, 0.1, EnsembleKind::two_design);
  CHECK_THROWS_AS(estimate_tree(t, other, 1), InvalidInput);
}

TEST_CASE("Pauli QPD tree estimate") {
  const TreeCircuit t = random_tree(1, 2, 2, 47);
  const QpdRun r = pauli_qpd_tree_estimate(t, 200000, 53);
  // Range ±16: 5σ of the mean is about 0.18.
  CHECK(std::abs(r.estimate - exact_expectation(t)) <= 0.18);
  CHECK(r.max_abs_output == Catch::Approx(16.0));
  CHECK(r.shots == 200000);
  CHECK_THROWS_AS(pauli_qpd_tree_estimate(copy_tree(2), 10, 1), InvalidInput);
}

TEST_CASE("separation instances") {
  for (int R : {1, 2, 3}) {
    for (int x : {0, 1}) {
      const SeparationInstance inst = make_separation_instance(R, 1, x, 0.5, 61 + R);
      CHECK(exact_expectation(to_tree(inst)) == Catch::Approx(x == 0 ? 0.5 : -0.5).margin(1e-12));
      const RVec ev = inst.state.matrix().selfadjointView<Eigen::Lower>().eigenvalues();
      const double dr = std::pow(2.0, R);
      for (Eigen::Index i = 0; i < ev.size(); ++i) {
        const bool lo = std::abs(ev(i) - 0.5 / dr) <= 1e-12, hi = std::abs(ev(i) - 1.5 / dr) <= 1e-12;
        CHECK((lo || hi));
      }
    }
  }
  CHECK(exact_expectation(to_tree(make_separation_instance(2, 2, 1, 0.3, 5))) == Catch::Approx(-0.3).margin(1e-12));
  CHECK_THROWS_AS(make_separation_instance(1, 1, 2, 0.5, 1), InvalidInput);
  CHECK_THROWS_AS(make_separation_instance(1, 1, 0, 1.5, 1), InvalidInput);
}

TEST_CASE("separation experiment") {
  SeparationConfig cfg;
  cfg.instances = 20;
  const auto pts = run_separation(1, cfg, {1, 400}, 67);
  REQUIRE(pts.size() == 4);
  for (const auto& p : pts) {
    CHECK(p.success_rate() >= 0.0);
    CHECK(p.success_rate() <= 1.0);
  }
  // At 400 shots both methods recover x at R = 1.
  CHECK(pts[2].success_rate() >= 0.9);
  CHECK(pts[3].success_rate() >= 0.9);
  CHECK(pts[2].total_shots == separation_plan(1, cfg).node_shots_total() + 400);
}

TEST_CASE("power bound (1+x)^r <= 1 + (e-1) r x") {
  const double e1 = std::numbers::e - 1.0;
  for (int r = 1; r <= 64; ++r)
    for (int i = 0; i <= 1000; ++i) {
      const double x = i / (1000.0 * r);
      CHECK(std::pow(1.0 + x, r) <= 1.0 + e1 * r * x + 1e-12);
    }
}

TEST_CASE("telescoping tensor bound") {
  for (int i = 0; i < 200; ++i) {
    Stream rng(71, stream_tag("telescoping"), static_cast<std::uint64_t>(i));
    const int k = 2 + static_cast<int>(rng.below(3));
    std::vector<Mat> a, b;
    double bound = 0.0;
    std::vector<double> na, nb, diff;
    for (int j = 0; j < k; ++j) {
      a.push_back(random_hermitian(2, rng));
      b.push_back(a.back() + 0.1 * rng.uniform() * random_hermitian(2, rng));
      na.push_back(op_norm(a.back()));
      nb.push_back(op_norm(b.back()));
      diff.push_back(op_norm(a.back() - b.back()));
    }
    for (int j = 0; j < k; ++j) {
      double term = diff[static_cast<std::size_t>(j)];
      for (int m = 0; m < k; ++m)
        if (m != j) term *= std::max(na[static_cast<std::size_t>(m)], nb[static_cast<std::size_t>(m)]);
      bound += term;
    }
    CHECK(op_norm(kron_all(a) - kron_all(b)) <= bound + 1e-12);
  }
}
