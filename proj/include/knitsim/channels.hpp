#pragma once

#include <optional>
#include <string>
#include <vector>

#include "knitsim/linalg.hpp"

namespace knitsim {

namespace detail {

// (I_A ⊗ K ⊗ I_B) X, where subsystem k of `dims` (row side) is K's input.
inline Mat left_on_subsystem(const Mat& k_op, const Mat& x, const std::vector<std::size_t>& dims, std::size_t k) {
  const auto in = static_cast<Eigen::Index>(dims[k]);
  const Eigen::Index out = k_op.rows();
  Eigen::Index a_dim = 1, b_dim = 1;
  for (std::size_t i = 0; i < k; ++i) a_dim *= static_cast<Eigen::Index>(dims[i]);
  for (std::size_t i = k + 1; i < dims.size(); ++i) b_dim *= static_cast<Eigen::Index>(dims[i]);
  Mat y = Mat::Zero(a_dim * out * b_dim, x.cols());
  for (Eigen::Index a = 0; a < a_dim; ++a) {
    for (Eigen::Index o = 0; o < out; ++o) {
      auto dst = y.middleRows((a * out + o) * b_dim, b_dim);
      for (Eigen::Index i = 0; i < in; ++i) {
        const cplx c = k_op(o, i);
        if (c == cplx(0.0, 0.0)) continue;
        dst += c * x.middleRows((a * in + i) * b_dim, b_dim);
      }
    }
  }
  return y;
}

// K X K† with K acting on subsystem k.
inline Mat sandwich_on_subsystem(const Mat& k_op, const Mat& x, const std::vector<std::size_t>& dims, std::size_t k) {
  const Mat y = left_on_subsystem(k_op, x, dims, k);
  return left_on_subsystem(k_op, y.adjoint(), dims, k).adjoint();
}

}  // namespace detail

inline constexpr double kTpTol = 1e-10;

// CPTP map in Kraus form; every Kraus operator is out_dim × in_dim.
class QuantumChannel {
 public:
  QuantumChannel() = default;

  explicit QuantumChannel(std::vector<Mat> kraus) : kraus_(std::move(kraus)) {
    require(!kraus_.empty(), "QuantumChannel: empty Kraus list");
    const Eigen::Index out = kraus_.front().rows(), in = kraus_.front().cols();
    require(out > 0 && in > 0, "QuantumChannel: empty Kraus operator");
    Mat sum = Mat::Zero(in, in);
    for (const Mat& k : kraus_) {
      require(k.rows() == out && k.cols() == in, "QuantumChannel: Kraus operators disagree in shape");
      require(all_finite(k), "QuantumChannel: non-finite Kraus entries");
      sum += k.adjoint() * k;
    }
    require(max_abs(sum - Mat::Identity(in, in)) <= kTpTol, "QuantumChannel: Kraus set is not trace preserving");
  }

  static QuantumChannel identity(Eigen::Index d) { return QuantumChannel({Mat::Identity(d, d)}); }

  static QuantumChannel unitary(const Mat& u) {
    require(u.rows() == u.cols(), "QuantumChannel::unitary: matrix must be square");
    return QuantumChannel({u});
  }

  // V is (out_dim · env) × in_dim; the environment factor (least significant)
  // is traced out.
  static QuantumChannel from_isometry(const Mat& v, Eigen::Index out_dim) {
    require(out_dim > 0 && v.rows() % out_dim == 0, "from_isometry: rows must be a multiple of out_dim");
    const Eigen::Index env = v.rows() / out_dim;
    std::vector<Mat> kraus;
    for (Eigen::Index e = 0; e < env; ++e) {
      Mat k(out_dim, v.cols());
      for (Eigen::Index o = 0; o < out_dim; ++o) k.row(o) = v.row(o * env + e);
      if (max_abs(k) > 0.0) kraus.push_back(std::move(k));
    }
    return QuantumChannel(std::move(kraus));
  }

  // Φ(X) = tr_env[U (X ⊗ |0..0⟩⟨0..0|) U†]: ancilla appended after the input,
  // the trailing (dim(U)/out_dim)-dimensional factor traced out.
  static QuantumChannel with_ancilla(const Mat& u, Eigen::Index in_dim, Eigen::Index out_dim) {
    require(u.rows() == u.cols(), "with_ancilla: U must be square");
    require(in_dim > 0 && u.rows() % in_dim == 0, "with_ancilla: dim(U) must be a multiple of in_dim");
    const Eigen::Index anc = u.rows() / in_dim;
    Mat v(u.rows(), in_dim);
    for (Eigen::Index i = 0; i < in_dim; ++i) v.col(i) = u.col(i * anc);
    return from_isometry(v, out_dim);
  }

  // Haar unitary on system + ancilla qubits, output = first out_dim factor.
  static QuantumChannel random(Eigen::Index in_dim, Eigen::Index out_dim, int ancilla_qubits, Stream& rng) {
    require(ancilla_qubits >= 0 && ancilla_qubits <= 8, "random channel: ancilla qubit count out of range");
    Eigen::Index total = in_dim << ancilla_qubits;
    while (total < out_dim || total % out_dim != 0) total *= 2;
    check_dim(static_cast<std::size_t>(total), "random channel");
    return with_ancilla(haar_unitary(total, rng), in_dim, out_dim);
  }

  // (1/4^n) Σ_P P ρ P = tr(ρ) I/d.
  static QuantumChannel fully_depolarizing(int n) {
    std::vector<Mat> kraus;
    const std::uint64_t count = std::uint64_t{1} << (2 * n);
    const double scale = 1.0 / std::sqrt(static_cast<double>(count));
    for (std::uint64_t p = 0; p < count; ++p) kraus.push_back(pauli_string(pauli_digits(p, n)) * scale);
    return QuantumChannel(std::move(kraus));
  }

  Eigen::Index in_dim() const { return kraus_.front().cols(); }
  Eigen::Index out_dim() const { return kraus_.front().rows(); }
  const std::vector<Mat>& kraus() const { return kraus_; }

 private:
  std::vector<Mat> kraus_;
};

// Σ K X K† on any operator X.
inline Mat apply(const QuantumChannel& ch, const Mat& x) {
  require(x.rows() == ch.in_dim() && x.cols() == ch.in_dim(), "apply: dimension mismatch");
  Mat out = Mat::Zero(ch.out_dim(), ch.out_dim());
  for (const Mat& k : ch.kraus()) out.noalias() += k * x * k.adjoint();
  return out;
}

inline DensityOperator apply(const QuantumChannel& ch, const DensityOperator& rho) {
  return DensityOperator(knitsim::apply(ch, rho.matrix()), DensityOperator::Unchecked{});
}

// Heisenberg picture: Σ K† O K.
inline Mat adjoint_apply(const QuantumChannel& ch, const Mat& o) {
  require(o.rows() == ch.out_dim() && o.cols() == ch.out_dim(), "adjoint_apply: dimension mismatch");
  Mat out = Mat::Zero(ch.in_dim(), ch.in_dim());
  for (const Mat& k : ch.kraus()) out.noalias() += k.adjoint() * o * k;
  return out;
}

inline HermitianOperator adjoint_apply(const QuantumChannel& ch, const HermitianOperator& o) {
  return HermitianOperator(hermitian_part(adjoint_apply(ch, o.matrix())));
}

// Channel on subsystem k of a multipartite operator; dims[k] must equal in_dim.
// The output has dims[k] replaced by out_dim.
inline Mat apply_on_subsystem(const QuantumChannel& ch, const Mat& x, const std::vector<std::size_t>& dims,
                              std::size_t k) {
  require(k < dims.size() && static_cast<Eigen::Index>(dims[k]) == ch.in_dim(),
          "apply_on_subsystem: subsystem dimension mismatch");
  require(static_cast<std::size_t>(x.rows()) == product(dims) && x.rows() == x.cols(),
          "apply_on_subsystem: operator does not match dims");
  std::vector<std::size_t> out_dims = dims;
  out_dims[k] = static_cast<std::size_t>(ch.out_dim());
  check_dim(product(out_dims), "apply_on_subsystem");
  Mat out = Mat::Zero(static_cast<Eigen::Index>(product(out_dims)), static_cast<Eigen::Index>(product(out_dims)));
  for (const Mat& kop : ch.kraus()) out += detail::sandwich_on_subsystem(kop, x, dims, k);
  return out;
}

// U X U† with U on subsystem k (U square, dims unchanged).
inline Mat conjugate_subsystem(const Mat& u, const Mat& x, const std::vector<std::size_t>& dims, std::size_t k) {
  require(k < dims.size() && static_cast<Eigen::Index>(dims[k]) == u.cols() && u.rows() == u.cols(),
          "conjugate_subsystem: subsystem dimension mismatch");
  return detail::sandwich_on_subsystem(u, x, dims, k);
}

// ---- measure-and-prepare channels ----

inline constexpr double kUnitaryTol = 1e-10;

inline bool is_unitary(const Mat& u, double tol = kUnitaryTol) {
  return u.rows() == u.cols() && max_abs(u.adjoint() * u - Mat::Identity(u.cols(), u.cols())) <= tol;
}

// Measure in the columns of `basis` and re-prepare the observed column.
// With weights, the classical post-processing Σ_j p_j λ̃_j is available
// instead of the quantum output.
class MPChannel {
 public:
  MPChannel() = default;

  explicit MPChannel(Mat basis, std::optional<RVec> weights = std::nullopt)
      : basis_(std::move(basis)), weights_(std::move(weights)) {
    require(is_unitary(basis_), "MPChannel: basis is not unitary");
    if (weights_) require(weights_->size() == basis_.cols(), "MPChannel: weights length must equal dim");
  }

  Eigen::Index dim() const { return basis_.rows(); }
  const Mat& basis() const { return basis_; }
  const std::optional<RVec>& weights() const { return weights_; }

 private:
  Mat basis_;
  std::optional<RVec> weights_;
};

// Pinching Σ_j V|j⟩⟨j|V† X V|j⟩⟨j|V†. Accepts any square operator.
inline Mat mp_apply(const MPChannel& mp, const Mat& x) {
  if (mp.weights()) throw Misuse("mp_apply: MP channel carries classical weights; use mp_classical");
  require(x.rows() == mp.dim() && x.cols() == mp.dim(), "mp_apply: dimension mismatch");
  const Mat& v = mp.basis();
  const Vec diag = (v.adjoint() * x * v).diagonal();
  return v * diag.asDiagonal() * v.adjoint();
}

inline DensityOperator mp_apply(const MPChannel& mp, const DensityOperator& rho) {
  return DensityOperator(mp_apply(mp, rho.matrix()), DensityOperator::Unchecked{});
}

inline HermitianOperator mp_apply(const MPChannel& mp, const HermitianOperator& h) {
  return HermitianOperator(hermitian_part(mp_apply(mp, h.matrix())));
}

// Σ_j ⟨j|V† X V|j⟩ λ̃_j = tr[Õ X] with Õ = V diag(λ̃) V†. Real part for Hermitian X.
inline cplx mp_classical(const MPChannel& mp, const Mat& x) {
  if (!mp.weights()) throw Misuse("mp_classical: MP channel has no classical weights");
  require(x.rows() == mp.dim() && x.cols() == mp.dim(), "mp_classical: dimension mismatch");
  const Mat& v = mp.basis();
  const Vec diag = (v.adjoint() * x * v).diagonal();
  cplx acc = 0.0;
  for (Eigen::Index j = 0; j < diag.size(); ++j) acc += diag(j) * (*mp.weights())(j);
  return acc;
}

inline double mp_classical(const MPChannel& mp, const DensityOperator& rho) {
  return mp_classical(mp, rho.matrix()).real();
}

// ---- measurement ----

inline constexpr double kDriftTol = 1e-9;

struct MeasurementSpec {
  HermitianOperator observable;
};

struct Outcome {
  Eigen::Index index = 0;
  double value = 0.0;
};

// Outcome probabilities ⟨j|W†ρW|j⟩, clamped and renormalized when the drift
// is at rounding level, rejected otherwise.
inline std::vector<double> probabilities_in_basis(const Mat& w, const Mat& rho) {
  require(w.rows() == rho.rows() && rho.rows() == rho.cols(), "probabilities_in_basis: dimension mismatch");
  const Eigen::Index d = w.cols();
  std::vector<double> p(static_cast<std::size_t>(d));
  double total = 0.0;
  for (Eigen::Index j = 0; j < d; ++j) {
    const double pj = w.col(j).dot(rho * w.col(j)).real();
    if (pj < -kDriftTol || pj > 1.0 + kDriftTol || !std::isfinite(pj)) {
      throw NumericIntegrity("outcome probability " + std::to_string(pj) + " outside [0,1]");
    }
    p[static_cast<std::size_t>(j)] = std::clamp(pj, 0.0, 1.0);
    total += p[static_cast<std::size_t>(j)];
  }
  if (std::abs(total - 1.0) > kDriftTol) {
    throw NumericIntegrity("outcome probabilities sum to " + std::to_string(total));
  }
  for (double& x : p) x /= total;
  return p;
}

// Probabilities of a diagonal already in the measurement basis.
inline std::vector<double> probabilities_from_diagonal(const Vec& diag) {
  std::vector<double> p(static_cast<std::size_t>(diag.size()));
  double total = 0.0;
  for (Eigen::Index j = 0; j < diag.size(); ++j) {
    const double pj = diag(j).real();
    if (pj < -kDriftTol || pj > 1.0 + kDriftTol || !std::isfinite(pj)) {
      throw NumericIntegrity("outcome probability " + std::to_string(pj) + " outside [0,1]");
    }
    p[static_cast<std::size_t>(j)] = std::clamp(pj, 0.0, 1.0);
    total += p[static_cast<std::size_t>(j)];
  }
  if (std::abs(total - 1.0) > kDriftTol) {
    throw NumericIntegrity("outcome probabilities sum to " + std::to_string(total));
  }
  for (double& x : p) x /= total;
  return p;
}

inline std::vector<double> cumulative(const std::vector<double>& p) {
  std::vector<double> c(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    c[i] = acc;
  }
  if (!c.empty()) c.back() = 1.0;
  return c;
}

// Index drawn from a cumulative table; zero-probability entries are never hit.
inline std::size_t sample_cumulative(const std::vector<double>& cdf, double u) {
  if (cdf.size() <= 8) {
    for (std::size_t i = 0; i < cdf.size(); ++i)
      if (u < cdf[i]) return i;
    return cdf.size() - 1;
  }
  const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
  return it == cdf.end() ? cdf.size() - 1 : static_cast<std::size_t>(it - cdf.begin());
}

inline std::vector<double> outcome_distribution(const MeasurementSpec& spec, const Mat& rho) {
  return probabilities_in_basis(spec.observable.eig().vectors, rho);
}

inline Outcome sample_outcome(const MeasurementSpec& spec, const DensityOperator& rho, Stream& rng) {
  require(rho.dim() == spec.observable.dim(), "sample_outcome: dimension mismatch");
  const auto cdf = cumulative(outcome_distribution(spec, rho.matrix()));
  const std::size_t j = sample_cumulative(cdf, rng.uniform());
  return {static_cast<Eigen::Index>(j), spec.observable.eig().values(static_cast<Eigen::Index>(j))};
}

}  // namespace knitsim
