#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "knitsim/channels.hpp"
#include "knitsim/ensembles.hpp"
#include "knitsim/tomography.hpp"

namespace knitsim {

// ---- rescaling-free cuts ----

// Pinching channel in the eigenbasis of Φ†(O); tr[O Φ(M(X))] = tr[O Φ(X)] for all X.
inline MPChannel exact_cut(const QuantumChannel& phi, const HermitianOperator& o) {
  require(o.dim() == phi.out_dim(), "exact_cut: observable dim must equal channel out_dim");
  return MPChannel(adjoint_apply(phi, o).eig().vectors);
}

enum class CutMode { channel, classical };

inline std::string to_string(CutMode m) { return m == CutMode::channel ? "channel" : "classical"; }

struct RescalingFreeCut {
  MPChannel mp;
  CutMode mode = CutMode::classical;
  double source_error_bound = 0.0;  // ε with ‖Õ_Φ − O_Φ‖∞ ≤ ε assumed

  // max_j |λ̃_j| in classical mode, 1 in channel mode.
  double max_weight() const { return mp.weights() ? mp.weights()->cwiseAbs().maxCoeff() : 1.0; }
};

// Cut from an estimate Õ_Φ: pinch in its eigenbasis (channel mode) or read
// out Σ_j p_j λ̃_j (classical mode).
inline RescalingFreeCut approx_cut(const HermitianOperator& estimate, CutMode mode, double error_bound = 0.0) {
  require(error_bound >= 0.0, "approx_cut: error bound must be non-negative");
  const Eig& e = estimate.eig();
  RescalingFreeCut cut;
  cut.mp = mode == CutMode::classical ? MPChannel(e.vectors, e.values) : MPChannel(e.vectors);
  cut.mode = mode;
  cut.source_error_bound = error_bound;
  return cut;
}

inline RescalingFreeCut approx_cut(const LearnedObservable& learned, CutMode mode, double error_bound = 0.0) {
  return approx_cut(learned.estimate, mode, error_bound);
}

// Kraus form {V|j⟩⟨j|V†} of a pinching channel.
inline QuantumChannel to_channel(const MPChannel& mp) {
  std::vector<Mat> kraus;
  for (Eigen::Index j = 0; j < mp.dim(); ++j) kraus.push_back(mp.basis().col(j) * mp.basis().col(j).adjoint());
  return QuantumChannel(std::move(kraus));
}

// ---- Pauli quasiprobability wire cut ----

// id = Σ_P E_P with E_P(ρ) = tr[Pρ]P / 2^n, sampled as: uniform P, measure
// ρ in P's eigenbasis (sign c), prepare a uniform eigenstate (sign c'),
// weight γ c c' with γ = 4^n.
struct QpdWireCut {
  int n = 1;
  double gamma = 4.0;
};

inline QpdWireCut pauli_qpd_cut(int n) {
  require(n >= 1 && n <= 10, "pauli_qpd_cut: n must lie in [1, 10]");
  return {n, std::pow(4.0, n)};
}

struct QpdShot {
  std::uint64_t pauli = 0;  // index into {I,X,Y,Z}^n, most significant qubit first
  Eigen::Index measured = 0;
  Eigen::Index prepared = 0;
  int sign = 1;             // c · c'
  double value = 0.0;       // γ c c' ν
};

// One shot of the cut wire feeding Φ and a measurement of O.
inline QpdShot qpd_single_shot(const QpdWireCut& cut, const Mat& rho, const QuantumChannel& phi,
                               const HermitianOperator& o, Stream& rng) {
  const Eigen::Index d = Eigen::Index{1} << cut.n;
  require(rho.rows() == d && phi.in_dim() == d && o.dim() == phi.out_dim(), "qpd_single_shot: dimension mismatch");
  QpdShot shot;
  shot.pauli = rng.below(std::uint64_t{1} << (2 * cut.n));
  std::vector<int> signs;
  const Mat w = pauli_eigenbasis(pauli_digits(shot.pauli, cut.n), &signs);
  shot.measured = static_cast<Eigen::Index>(sample_cumulative(cumulative(probabilities_in_basis(w, rho)), rng.uniform()));
  shot.prepared = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(d)));
  const Vec v = w.col(shot.prepared);
  const Mat out = knitsim::apply(phi, Mat(v * v.adjoint()));
  const std::size_t j = sample_cumulative(cumulative(probabilities_in_basis(o.eig().vectors, out)), rng.uniform());
  shot.sign = signs[static_cast<std::size_t>(shot.measured)] * signs[static_cast<std::size_t>(shot.prepared)];
  shot.value = cut.gamma * shot.sign * o.eig().values(static_cast<Eigen::Index>(j));
  return shot;
}

// Exact mean of qpd_single_shot over every (P, e, e', outcome).
inline double qpd_exact_expectation(const QpdWireCut& cut, const Mat& rho, const QuantumChannel& phi,
                                    const HermitianOperator& o) {
  const Eigen::Index d = Eigen::Index{1} << cut.n;
  require(rho.rows() == d && phi.in_dim() == d && o.dim() == phi.out_dim(), "qpd_exact_expectation: dimension mismatch");
  const std::uint64_t paulis = std::uint64_t{1} << (2 * cut.n);
  double total = 0.0;
  for (std::uint64_t p = 0; p < paulis; ++p) {
    std::vector<int> signs;
    const Mat w = pauli_eigenbasis(pauli_digits(p, cut.n), &signs);
    for (Eigen::Index e = 0; e < d; ++e) {
      const double pe = w.col(e).dot(rho * w.col(e)).real();
      for (Eigen::Index e2 = 0; e2 < d; ++e2) {
        const Vec v = w.col(e2);
        const double mean_nu = (o.matrix() * knitsim::apply(phi, Mat(v * v.adjoint()))).trace().real();
        total += pe * (1.0 / static_cast<double>(d)) * cut.gamma * signs[static_cast<std::size_t>(e)] *
                 signs[static_cast<std::size_t>(e2)] * mean_nu;
      }
    }
  }
  return total / static_cast<double>(paulis);
}

// ---- two-block circuit checks ----

// Registers A, B (upstream, U1 on A⊗B from |0⟩), then B, C (downstream,
// U2 on B⊗C with C from |0⟩). O = O1 (on A) ⊗ O2 (on B⊗C). The wire B is cut.
struct TwoBlockCircuit {
  QuantumChannel u1;  // on A⊗B
  QuantumChannel u2;  // on B⊗C
  HermitianOperator o1;
  HermitianOperator o2;
  Eigen::Index dim_a = 2, dim_b = 2, dim_c = 2;
};

struct TwoBlockResult {
  double exact = 0.0;
  double dev_in = 0.0;   // |⟨O⟩ with M_in − ⟨O⟩|
  double dev_out = 0.0;  // |⟨O⟩ with M_out − ⟨O⟩|
};

namespace detail {

inline void validate_two_block(const TwoBlockCircuit& c) {
  const Eigen::Index ab = c.dim_a * c.dim_b, bc = c.dim_b * c.dim_c;
  require(c.u1.in_dim() == ab && c.u1.out_dim() == ab, "two_block_check: U1 must act on A⊗B");
  require(c.u2.in_dim() == bc && c.u2.out_dim() == bc, "two_block_check: U2 must act on B⊗C");
  require(c.o1.dim() == c.dim_a, "two_block_check: O1 must act on A");
  require(c.o2.dim() == bc, "two_block_check: O2 must act on B⊗C");
}

// tr[(O1 ⊗ O2) (id_A ⊗ U2)(σ_AB ⊗ |0⟩⟨0|_C)].
inline double two_block_value(const TwoBlockCircuit& c, const Mat& sigma_ab) {
  Mat zero_c = Mat::Zero(c.dim_c, c.dim_c);
  zero_c(0, 0) = 1.0;
  const Mat tau = kron(sigma_ab, zero_c);
  const std::vector<std::size_t> dims{static_cast<std::size_t>(c.dim_a), static_cast<std::size_t>(c.dim_b * c.dim_c)};
  const Mat out = apply_on_subsystem(c.u2, tau, dims, 1);
  return (kron(c.o1.matrix(), c.o2.matrix()) * out).trace().real();
}

}  // namespace detail

// Q1 = tr_A[(O1 ⊗ I) U1(|0⟩⟨0|)].
inline HermitianOperator upstream_operator(const TwoBlockCircuit& c) {
  detail::validate_two_block(c);
  const Eigen::Index ab = c.dim_a * c.dim_b;
  const Mat sigma = knitsim::apply(c.u1, Mat(basis_vector(ab, 0) * basis_vector(ab, 0).adjoint()));
  const Mat weighted = kron(c.o1.matrix(), Mat::Identity(c.dim_b, c.dim_b)) * sigma;
  return HermitianOperator(hermitian_part(
      partial_trace(weighted, {static_cast<std::size_t>(c.dim_a), static_cast<std::size_t>(c.dim_b)}, {1})));
}

// Q2 = ⟨0_C| U2†(O2) |0_C⟩.
inline HermitianOperator downstream_operator(const TwoBlockCircuit& c) {
  detail::validate_two_block(c);
  const Mat heis = adjoint_apply(c.u2, c.o2.matrix());
  Mat q(c.dim_b, c.dim_b);
  for (Eigen::Index i = 0; i < c.dim_b; ++i)
    for (Eigen::Index j = 0; j < c.dim_b; ++j) q(i, j) = heis(i * c.dim_c, j * c.dim_c);
  return HermitianOperator(hermitian_part(q));
}

// Both pinchings (eigenbasis of Q1, eigenbasis of Q2) on wire B reproduce ⟨O⟩.
inline TwoBlockResult two_block_check(const TwoBlockCircuit& c) {
  detail::validate_two_block(c);
  const Eigen::Index ab = c.dim_a * c.dim_b;
  const Mat sigma = knitsim::apply(c.u1, Mat(basis_vector(ab, 0) * basis_vector(ab, 0).adjoint()));
  const std::vector<std::size_t> dims{static_cast<std::size_t>(c.dim_a), static_cast<std::size_t>(c.dim_b)};
  TwoBlockResult r;
  r.exact = detail::two_block_value(c, sigma);
  const QuantumChannel m_in = to_channel(MPChannel(upstream_operator(c).eig().vectors));
  const QuantumChannel m_out = to_channel(MPChannel(downstream_operator(c).eig().vectors));
  r.dev_in = std::abs(detail::two_block_value(c, apply_on_subsystem(m_in, sigma, dims, 1)) - r.exact);
  r.dev_out = std::abs(detail::two_block_value(c, apply_on_subsystem(m_out, sigma, dims, 1)) - r.exact);
  return r;
}

// Σ_{P ∈ {I,Z}^n} E_{U†PU} with E_Q(X) = tr[QX]Q / 2^n, against the pinching
// in the basis {U†|j⟩}. Returns the max-abs difference of the two
// superoperator matrices.
inline double z_sector_identity_check(const Mat& u) {
  require(is_unitary(u), "z_sector_identity_check: U must be unitary");
  const Eigen::Index d = u.rows();
  const int n = log2_exact(static_cast<std::size_t>(d));
  std::vector<Mat> rotated;
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    std::vector<int> digits(static_cast<std::size_t>(n), 0);
    for (int q = 0; q < n; ++q) digits[static_cast<std::size_t>(q)] = ((mask >> (n - 1 - q)) & 1u) ? 3 : 0;
    rotated.push_back(u.adjoint() * pauli_string(digits) * u);
  }
  const auto lhs = [&](const Mat& x) {
    Mat out = Mat::Zero(d, d);
    for (const Mat& q : rotated) out += (q * x).trace() * q;
    return Mat(out / static_cast<double>(d));
  };
  const MPChannel mp(u.adjoint());
  const auto rhs = [&](const Mat& x) { return mp_apply(mp, x); };
  return max_abs(superoperator(lhs, d) - superoperator(rhs, d));
}

}  // namespace knitsim
