#include <catch_amalgamated.hpp>

#include <algorithm>
#include <array>
#include <cmath>

#include "knitsim/tomography.hpp"

using namespace knitsim;

namespace {

constexpr std::array<EnsembleKind, 3> kAllKinds{EnsembleKind::two_design, EnsembleKind::stabilizer_product,
                                                EnsembleKind::pauli_eigenstates};

Mat hadamard() {
  Mat h(2, 2);
  h << 1, 1, 1, -1;
  return h / std::sqrt(2.0);
}

// E[ω] over the full ensemble and the true outcome distribution.
Mat exact_mean_estimator(const QuantumChannel& ch, const HermitianOperator& o, EnsembleKind kind, int n) {
  const Eigen::Index d = Eigen::Index{1} << n;
  const std::uint64_t size = ensemble_size(kind, n);
  Mat acc = Mat::Zero(d, d);
  for (std::uint64_t i = 0; i < size; ++i) {
    const ProbeSample s = probe(kind, n, i);
    const Mat out = knitsim::apply(ch, Mat(s.state * s.state.adjoint()));
    const Eig& e = o.eig();
    for (Eigen::Index j = 0; j < e.values.size(); ++j) {
      const double p = e.vectors.col(j).dot(out * e.vectors.col(j)).real();
      acc += p * single_shot_estimator(s, e.values(j));
    }
  }
  return acc / double(size);
}

}  // namespace

TEST_CASE("planner closed-form values") {
  // Independent arithmetic of the planner formula at d=2, ‖O‖=1, ε=δ=0.1.
  const double ln20 = std::log(20.0);
  const double two_design = 2.0 * 5.0 * (3.0 + 0.1 / 3.0) / 0.01 * ln20;
  const double stab = 2.0 * (11.0 + (0.1 / 3.0) * 5.0) / 0.01 * ln20;
  const double pauli = 2.0 * (17.0 + (0.1 / 3.0) * 5.0) / 0.01 * ln20;
  CHECK(plan_shots(EnsembleKind::two_design, 2, 1.0, 0.1, 0.1) == std::uint64_t(std::ceil(two_design)));
  CHECK(plan_shots(EnsembleKind::stabilizer_product, 2, 1.0, 0.1, 0.1) == std::uint64_t(std::ceil(stab)));
  CHECK(plan_shots(EnsembleKind::pauli_eigenstates, 2, 1.0, 0.1, 0.1) == std::uint64_t(std::ceil(pauli)));
  // Frozen from the arithmetic above.
  CHECK(plan_shots(EnsembleKind::two_design, 2, 1.0, 0.1, 0.1) == 9088);
  CHECK(plan_shots(EnsembleKind::stabilizer_product, 2, 1.0, 0.1, 0.1) == 6691);
  CHECK(plan_shots(EnsembleKind::pauli_eigenstates, 2, 1.0, 0.1, 0.1) == 10286);
}

TEST_CASE("planner monotonicity, norm scaling and input checks") {
  for (EnsembleKind k : kAllKinds) {
    std::uint64_t prev = plan_shots(k, 4, 1.0, 0.05, 0.1);
    for (double eps = 0.06; eps <= 1.0; eps += 0.01) {
      const std::uint64_t cur = plan_shots(k, 4, 1.0, eps, 0.1);
      CHECK(cur <= prev);
      prev = cur;
    }
    CHECK(plan_shots(k, 2, 0.5, 0.1, 0.1) == plan_shots(k, 2, 1.0, 0.1, 0.1));
    CHECK(plan_shots(k, 2, 2.0, 0.1, 0.1) > plan_shots(k, 2, 1.0, 0.1, 0.1));
  }
  CHECK_THROWS_AS(plan_shots(EnsembleKind::two_design, 2, 1.0, 0.0, 0.1), InvalidInput);
  CHECK_THROWS_AS(plan_shots(EnsembleKind::two_design, 2, 1.0, 0.1, 1.5), InvalidInput);
  CHECK_THROWS_AS(plan_shots(EnsembleKind::two_design, 3, 1.0, 0.1, 0.1), InvalidInput);
}

TEST_CASE("Bernstein tail inverts the planner") {
  CHECK(bernstein_tail(1.0, 1.0, 4.0, 0.0) == 4.0);
  for (EnsembleKind k : kAllKinds) {
    for (int n = 1; n <= 3; ++n) {
      for (double norm : {0.5, 1.0, 2.0}) {
        const double eps = 0.1, delta = 0.05;
        const std::uint64_t shots = plan_shots(k, std::size_t{1} << n, norm, eps, delta);
        const auto [alpha, sigma2] = bernstein_parameters(k, n, norm, shots);
        CHECK(bernstein_tail(alpha, sigma2, std::ldexp(1.0, n), eps) <= delta);
        const auto [a2, s2] = bernstein_parameters(k, n, norm, 2 * shots);
        CHECK(bernstein_tail(a2, s2, std::ldexp(1.0, n), eps) < bernstein_tail(alpha, sigma2, std::ldexp(1.0, n), eps));
      }
    }
  }
}

TEST_CASE("single-shot estimator is unbiased by enumeration") {
  Stream rng(31, stream_tag("test-unbiased"));
  for (EnsembleKind k : kAllKinds) {
    for (int n = 1; n <= 2; ++n) {
      const Eigen::Index d = Eigen::Index{1} << n;
      for (int t = 0; t < 3; ++t) {
        const QuantumChannel ch = QuantumChannel::random(d, 2 << t % 2, 1, rng);
        const HermitianOperator o(random_hermitian(ch.out_dim(), rng));
        CHECK(max_abs(exact_mean_estimator(ch, o, k, n) - adjoint_apply(ch, o).matrix()) <= 1e-10);
      }
    }
  }
}

TEST_CASE("learn: one shot equals the single estimator") {
  for (EnsembleKind k : kAllKinds) {
    LearningTask task{QuantumChannel::identity(2), HermitianOperator(pauli(3)), k, 1, 99};
    const LearnedObservable got = learn(task);
    const auto recs = collect_shots(task);
    REQUIRE(recs.size() == 1);
    const Mat omega = single_shot_estimator(probe(k, 1, recs[0].probe), recs[0].value);
    CHECK(max_abs(got.estimate.matrix() - omega) == 0.0);
    CHECK(got.shots_used == 1);
  }
}

TEST_CASE("learn meets the planned accuracy") {
  const double eps = 0.2, delta = 0.1;
  for (EnsembleKind k : kAllKinds) {
    const std::uint64_t shots = plan_shots(k, 2, 1.0, eps, delta);
    int ok_id = 0, ok_h = 0;
    for (int t = 0; t < 50; ++t) {
      LearningTask id{QuantumChannel::identity(2), HermitianOperator(pauli(3)), k, shots, std::uint64_t(1000 + t)};
      ok_id += op_norm(learn(id).estimate.matrix() - pauli(3)) <= eps;
      LearningTask h{QuantumChannel::unitary(hadamard()), HermitianOperator(pauli(3)), k, shots, std::uint64_t(2000 + t)};
      ok_h += op_norm(learn(h).estimate.matrix() - pauli(1)) <= eps;
    }
    CHECK(ok_id >= 45);
    CHECK(ok_h >= 45);
  }
}

TEST_CASE("learn is independent of thread count and record order") {
  Stream rng(41, stream_tag("test-learn-threads"));
  const QuantumChannel ch = QuantumChannel::random(4, 2, 1, rng);
  const HermitianOperator o(random_hermitian(2, rng));
  for (EnsembleKind k : kAllKinds) {
    LearningTask task{ch, o, k, 20000, 5};
    const LearnedObservable one = learn(task);
    const LearnedObservable four = learn(task, {4, std::nullopt});
    CHECK(max_abs(one.estimate.matrix() - four.estimate.matrix()) == 0.0);

    auto recs = collect_shots(task);
    const Mat in_order = mean_of_records(k, 2, recs);
    CHECK(max_abs(in_order - one.estimate.matrix()) <= 1e-12);
    Stream shuffle(6, stream_tag("shuffle"));
    std::shuffle(recs.begin(), recs.end(), shuffle);
    CHECK(max_abs(mean_of_records(k, 2, recs) - in_order) <= 1e-12);
  }
}

TEST_CASE("learn rejects inconsistent tasks") {
  LearningTask bad{QuantumChannel::identity(2), HermitianOperator(Mat::Identity(4, 4)), EnsembleKind::pauli_eigenstates,
                   10, 1};
  CHECK_THROWS_AS(learn(bad), InvalidInput);
  LearningTask zero{QuantumChannel::identity(2), HermitianOperator(pauli(3)), EnsembleKind::pauli_eigenstates, 0, 1};
  CHECK_THROWS_AS(learn(zero), InvalidInput);
}

TEST_CASE("optional clipping truncates the spectrum") {
  LearningTask task{QuantumChannel::identity(2), HermitianOperator(pauli(3)), EnsembleKind::pauli_eigenstates, 3, 8};
  const LearnedObservable clipped = learn(task, {1, 1.1});
  CHECK(clipped.estimate.norm() <= 1.1 + 1e-12);
  REQUIRE(clipped.norm_bound_cap.has_value());
}
