#pragma once

#include <bit>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "knitsim/linalg.hpp"

namespace knitsim {

enum class EnsembleKind { two_design, stabilizer_product, pauli_eigenstates };

inline std::string to_string(EnsembleKind k) {
  switch (k) {
    case EnsembleKind::two_design: return "two_design";
    case EnsembleKind::stabilizer_product: return "stabilizer_product";
    case EnsembleKind::pauli_eigenstates: return "pauli_eigenstates";
  }
  return "?";
}

inline EnsembleKind parse_ensemble(std::string_view s) {
  if (s == "two_design" || s == "2dgn" || s == "2-design" || s == "mub") return EnsembleKind::two_design;
  if (s == "stabilizer_product" || s == "stab" || s == "stabilizer") return EnsembleKind::stabilizer_product;
  if (s == "pauli_eigenstates" || s == "pauli") return EnsembleKind::pauli_eigenstates;
  throw InvalidInput("unknown ensemble kind '" + std::string(s) + "'");
}

struct ProbeSample {
  EnsembleKind kind = EnsembleKind::two_design;
  int n = 1;
  std::uint64_t index = 0;  // position in the finite ensemble
  Vec state;
  std::vector<int> pauli;   // pauli: operator digits (0=I,1=X,2=Y,3=Z) per qubit
  int sign = 1;             // pauli: eigenvalue c of P_i on `state`
  std::vector<int> labels;  // stabilizer: single-qubit state labels per qubit
};

// Single-qubit stabilizer states: 0:|0⟩ 1:|1⟩ 2:|+⟩ 3:|−⟩ 4:|+i⟩ 5:|−i⟩.
inline Vec stabilizer_state(int label) {
  const double r = std::sqrt(0.5);
  Vec v(2);
  switch (label) {
    case 0: v << 1, 0; break;
    case 1: v << 0, 1; break;
    case 2: v << r, r; break;
    case 3: v << r, -r; break;
    case 4: v << r, cplx(0, r); break;
    case 5: v << r, cplx(0, -r); break;
    default: throw InvalidInput("stabilizer_state: label must be 0..5");
  }
  return v;
}

// Eigenstate e ∈ {0,1} of a single-qubit Pauli and its eigenvalue. The
// identity uses |0⟩, |1⟩, both with eigenvalue +1.
inline int pauli_eigen_label(int pauli_idx, int e) {
  static constexpr int table[4][2] = {{0, 1}, {2, 3}, {4, 5}, {0, 1}};
  return table[pauli_idx][e];
}

inline int pauli_eigen_sign(int pauli_idx, int e) { return (pauli_idx == 0 || e == 0) ? 1 : -1; }

// Eigenbasis of an n-qubit Pauli string as columns (product of single-qubit
// eigenvectors, e most significant first) and the matching eigenvalues.
inline Mat pauli_eigenbasis(const std::vector<int>& idx, std::vector<int>* signs = nullptr) {
  const int n = static_cast<int>(idx.size());
  const Eigen::Index d = Eigen::Index{1} << n;
  Mat w(d, d);
  if (signs) signs->assign(static_cast<std::size_t>(d), 1);
  for (Eigen::Index e = 0; e < d; ++e) {
    Vec v = Vec::Ones(1);
    int c = 1;
    for (int q = 0; q < n; ++q) {
      const int bit = static_cast<int>((e >> (n - 1 - q)) & 1);
      v = kron_vec(v, stabilizer_state(pauli_eigen_label(idx[static_cast<std::size_t>(q)], bit)));
      c *= pauli_eigen_sign(idx[static_cast<std::size_t>(q)], bit);
    }
    w.col(e) = v;
    if (signs) (*signs)[static_cast<std::size_t>(e)] = c;
  }
  return w;
}

// ---- mutually unbiased bases for n qubits ----

namespace detail {

inline std::uint32_t gf_poly(int n) {
  // Primitive polynomials over GF(2), low bits only (x^n term implied).
  static constexpr std::uint32_t low[] = {0, 0x1, 0x3, 0x3, 0x3, 0x5, 0x3, 0x3};
  require(n >= 1 && n <= 7, "GF(2^n) supported for n in 1..7");
  return low[n];
}

inline std::uint32_t gf_mul(std::uint32_t a, std::uint32_t b, int n) {
  const std::uint32_t poly = gf_poly(n);
  std::uint32_t r = 0;
  for (int i = n - 1; i >= 0; --i) {
    const bool carry = (r >> (n - 1)) & 1u;
    r = (r << 1) & ((1u << n) - 1);
    if (carry) r ^= poly;
    if ((b >> i) & 1u) r ^= a;
  }
  return r;
}

// Absolute trace GF(2^n) → GF(2): a + a² + a⁴ + ...
inline int gf_trace(std::uint32_t a, int n) {
  std::uint32_t t = 0, p = a;
  for (int i = 0; i < n; ++i) {
    t ^= p;
    p = gf_mul(p, p, n);
  }
  return static_cast<int>(t & 1u);
}

// d+1 bases as columns of d×d unitaries: the computational basis and, for each
// field element a, the stabilizer basis Σ_x i^{xᵀS_a x}(−1)^{b·x}|x⟩/√d with
// (S_a)_jk = tr(a·x^j·x^k). S_a − S_a' = S_{a+a'} is invertible for a ≠ a',
// which makes every pair of bases unbiased.
inline std::vector<Mat> build_mubs(int n) {
  const std::uint32_t d = 1u << n;
  std::vector<Mat> bases;
  bases.push_back(Mat::Identity(d, d));
  const double amp = 1.0 / std::sqrt(static_cast<double>(d));
  static const cplx ipow[4] = {cplx(1, 0), cplx(0, 1), cplx(-1, 0), cplx(0, -1)};
  for (std::uint32_t a = 0; a < d; ++a) {
    std::vector<std::vector<int>> s(static_cast<std::size_t>(n), std::vector<int>(static_cast<std::size_t>(n)));
    for (int j = 0; j < n; ++j)
      for (int k = 0; k < n; ++k)
        s[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] =
            gf_trace(gf_mul(a, gf_mul(1u << j, 1u << k, n), n), n);
    Mat basis(d, d);
    for (std::uint32_t b = 0; b < d; ++b) {
      for (std::uint32_t x = 0; x < d; ++x) {
        int q = 0;
        for (int j = 0; j < n; ++j)
          for (int k = 0; k < n; ++k)
            q += s[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] * static_cast<int>((x >> j) & 1u) *
                 static_cast<int>((x >> k) & 1u);
        const int parity = std::popcount(b & x) & 1;
        basis(x, b) = amp * ipow[q & 3] * (parity ? -1.0 : 1.0);
      }
    }
    bases.push_back(std::move(basis));
  }
  return bases;
}

}  // namespace detail

// Second moment Σ_i p_i (|ψ_i⟩⟨ψ_i|)^{⊗2} of a uniform ensemble given as columns.
inline Mat second_moment(const std::vector<Vec>& states) {
  const Eigen::Index d = states.front().size();
  Mat m = Mat::Zero(d * d, d * d);
  for (const Vec& s : states) {
    const Vec ss = kron_vec(s, s);
    m.noalias() += ss * ss.adjoint();
  }
  return m / static_cast<double>(states.size());
}

// Frame potential (1/K²) Σ_ij |⟨ψ_i|ψ_j⟩|⁴; equals 2/(d(d+1)) iff 2-design.
inline double frame_potential(const std::vector<Vec>& states) {
  double acc = 0.0;
  for (const Vec& a : states)
    for (const Vec& b : states) acc += std::pow(std::norm(a.dot(b)), 2);
  return acc / static_cast<double>(states.size() * states.size());
}

// MUB tables, generated once per n and gated by the exact second-moment test
// (n ≤ 3) or the frame potential (n = 4, 5).
inline const std::vector<Mat>& mub_tables(int n) {
  static std::mutex mu;
  static std::map<int, std::shared_ptr<const std::vector<Mat>>> cache;
  require(n >= 2 && n <= 5, "two-design tables are available for 2 <= n <= 5");
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return *it->second;
  auto bases = std::make_shared<std::vector<Mat>>(detail::build_mubs(n));
  std::vector<Vec> states;
  for (const Mat& b : *bases)
    for (Eigen::Index c = 0; c < b.cols(); ++c) states.push_back(b.col(c));
  const Eigen::Index d = Eigen::Index{1} << n;
  if (n <= 3) {
    if (max_abs(second_moment(states) - haar_moment_2(d)) > 1e-12)
      throw NumericIntegrity("MUB table failed the second-moment check");
  } else {
    if (std::abs(frame_potential(states) - 2.0 / static_cast<double>(d * (d + 1))) > 1e-12)
      throw NumericIntegrity("MUB table failed the frame-potential check");
  }
  cache[n] = bases;
  return *bases;
}

inline std::uint64_t ensemble_size(EnsembleKind kind, int n) {
  require(n >= 1, "ensemble: n must be at least 1");
  switch (kind) {
    case EnsembleKind::two_design: {
      const std::uint64_t d = std::uint64_t{1} << n;
      return n == 1 ? 6 : d * (d + 1);
    }
    case EnsembleKind::stabilizer_product: {
      require(n <= 20, "stabilizer ensemble: n too large");
      std::uint64_t s = 1;
      for (int i = 0; i < n; ++i) s *= 6;
      return s;
    }
    case EnsembleKind::pauli_eigenstates:
      require(n <= 20, "pauli ensemble: n too large");
      return std::uint64_t{1} << (3 * n);
  }
  return 0;
}

// The `index`-th element of the finite ensemble; every element has
// probability 1/ensemble_size.
inline ProbeSample probe(EnsembleKind kind, int n, std::uint64_t index) {
  require(index < ensemble_size(kind, n), "probe: index out of range");
  ProbeSample s;
  s.kind = kind;
  s.n = n;
  s.index = index;
  switch (kind) {
    case EnsembleKind::two_design: {
      if (n == 1) {
        s.state = stabilizer_state(static_cast<int>(index));
        s.labels = {static_cast<int>(index)};
      } else {
        const std::uint64_t d = std::uint64_t{1} << n;
        s.state = mub_tables(n)[index / d].col(static_cast<Eigen::Index>(index % d));
      }
      break;
    }
    case EnsembleKind::stabilizer_product: {
      s.labels.assign(static_cast<std::size_t>(n), 0);
      std::uint64_t r = index;
      for (int q = n - 1; q >= 0; --q) {
        s.labels[static_cast<std::size_t>(q)] = static_cast<int>(r % 6);
        r /= 6;
      }
      Vec v = Vec::Ones(1);
      for (int l : s.labels) v = kron_vec(v, stabilizer_state(l));
      s.state = v;
      break;
    }
    case EnsembleKind::pauli_eigenstates: {
      const std::uint64_t e = index & ((std::uint64_t{1} << n) - 1);
      s.pauli = pauli_digits(index >> n, n);
      Vec v = Vec::Ones(1);
      int c = 1;
      for (int q = 0; q < n; ++q) {
        const int bit = static_cast<int>((e >> (n - 1 - q)) & 1u);
        const int p = s.pauli[static_cast<std::size_t>(q)];
        v = kron_vec(v, stabilizer_state(pauli_eigen_label(p, bit)));
        c *= pauli_eigen_sign(p, bit);
      }
      s.state = v;
      s.sign = c;
      break;
    }
  }
  return s;
}

inline ProbeSample draw(EnsembleKind kind, int n, Stream& rng) {
  return probe(kind, n, rng.below(ensemble_size(kind, n)));
}

// Single-shot estimator of Φ†(O) for measured eigenvalue ν:
//   two-design  ν (d(d+1)|ψ⟩⟨ψ| − d I)
//   stabilizer  ν ⊗_s (6|u_s⟩⟨u_s| − 2 I)
//   pauli       4^n ν c P_i
inline Mat single_shot_estimator(const ProbeSample& s, double nu) {
  const Eigen::Index d = s.state.size();
  switch (s.kind) {
    case EnsembleKind::two_design: {
      const double dd = static_cast<double>(d);
      return nu * (dd * (dd + 1.0) * (s.state * s.state.adjoint()) - dd * Mat::Identity(d, d));
    }
    case EnsembleKind::stabilizer_product: {
      std::vector<Mat> f;
      for (int l : s.labels) {
        const Vec u = stabilizer_state(l);
        f.push_back(6.0 * (u * u.adjoint()) - 2.0 * Mat::Identity(2, 2));
      }
      return nu * kron_all(f);
    }
    case EnsembleKind::pauli_eigenstates:
      return (nu * static_cast<double>(s.sign) * std::pow(4.0, s.n)) * pauli_string(s.pauli);
  }
  return Mat();
}

// Operator-norm cap of the single-shot estimator for |ν| = 1.
inline double estimator_norm_bound(EnsembleKind kind, int n) {
  const double d = std::ldexp(1.0, n);
  switch (kind) {
    case EnsembleKind::two_design: return d * d;
    case EnsembleKind::stabilizer_product: return std::pow(4.0, n);
    case EnsembleKind::pauli_eigenstates: return std::pow(4.0, n);
  }
  return 0.0;
}

inline constexpr int kMaxEnumerationQubits = 4;

// Σ_i p_i tr[A|ψ_i⟩⟨ψ_i|] ω_i(ν=1) over the whole ensemble, compared with A.
// Returns ‖result − A‖∞.
inline double reconstruction_identity_check(EnsembleKind kind, int n, const Mat& a) {
  require(n >= 1 && n <= kMaxEnumerationQubits, "reconstruction_identity_check: n too large for enumeration");
  const Eigen::Index d = Eigen::Index{1} << n;
  require(a.rows() == d && a.cols() == d, "reconstruction_identity_check: A has the wrong dimension");
  const std::uint64_t size = ensemble_size(kind, n);
  Mat acc = Mat::Zero(d, d);
  for (std::uint64_t i = 0; i < size; ++i) {
    const ProbeSample s = probe(kind, n, i);
    const cplx expectation = s.state.dot(a * s.state);  // ⟨ψ|A|ψ⟩
    acc += expectation * single_shot_estimator(s, 1.0);
  }
  acc /= static_cast<double>(size);
  return op_norm(acc - a);
}

}  // namespace knitsim
