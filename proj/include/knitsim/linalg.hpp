#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <memory>
#include <mutex>
#include <numeric>
#include <string>
#include <string_view>
#include <vector>

#include "knitsim/core.hpp"
#include "knitsim/rng.hpp"

namespace knitsim {

using cplx = std::complex<double>;
using Mat = Eigen::MatrixXcd;
using Vec = Eigen::VectorXcd;
using RVec = Eigen::VectorXd;

inline constexpr double kHermTol = 1e-12;
inline constexpr double kReconTol = 1e-10;

inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline double max_abs(const Mat& m) { return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff(); }

inline Mat identity(Eigen::Index d) { return Mat::Identity(d, d); }

// Hermiticity gate used everywhere: absolute 1e-12, scaled up for large entries.
inline bool is_hermitian(const Mat& m, double tol = kHermTol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, max_abs(m));
  return max_abs(m - m.adjoint()) <= tol * scale;
}

inline Mat hermitian_part(const Mat& m) { return (m + m.adjoint()) * 0.5; }

struct Eig {
  RVec values;  // descending
  Mat vectors;  // columns
};

namespace detail {

// First component with non-negligible magnitude made real positive.
inline void fix_phase(Eigen::Ref<Vec> v) {
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double a = std::abs(v(i));
    if (a > 1e-12) {
      v *= std::conj(v(i)) / a;
      v(i) = cplx(a, 0.0);
      return;
    }
  }
}

// Lexicographic order on component magnitudes, larger first.
inline bool lex_greater(const Vec& a, const Vec& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double x = std::abs(a(i)), y = std::abs(b(i));
    if (x > y + 1e-12) return true;
    if (y > x + 1e-12) return false;
  }
  return false;
}

// Canonical orthonormal basis of the span of `block` columns: greedy
// Gram-Schmidt on projected computational basis vectors, largest residual first.
inline Mat canonical_basis(const Mat& block) {
  const Eigen::Index d = block.rows(), k = block.cols();
  const Mat proj = block * block.adjoint();
  Mat out(d, k);
  std::vector<Vec> residuals(static_cast<std::size_t>(d));
  for (Eigen::Index i = 0; i < d; ++i) residuals[static_cast<std::size_t>(i)] = proj.col(i);
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::Index best = 0;
    double best_norm = -1.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      const double nrm = residuals[static_cast<std::size_t>(i)].norm();
      if (nrm > best_norm + 1e-12) {
        best_norm = nrm;
        best = i;
      }
    }
    Vec v = residuals[static_cast<std::size_t>(best)] / best_norm;
    // One re-orthogonalization pass for stability.
    for (Eigen::Index p = 0; p < c; ++p) v -= out.col(p) * out.col(p).dot(v);
    v.normalize();
    out.col(c) = v;
    for (auto& r : residuals) r -= v * v.dot(r);
  }
  return out;
}

}  // namespace detail

// Hermitian eigendecomposition with deterministic ordering: eigenvalues
// descending; exactly degenerate clusters get a canonical basis; ties are
// ordered by component magnitudes; every vector has its first non-negligible
// component real positive.
inline Eig herm_eig(const Mat& h) {
  require(h.rows() == h.cols() && h.rows() > 0, "herm_eig: matrix must be square and non-empty");
  require(all_finite(h), "herm_eig: non-finite entries");
  require(is_hermitian(h), "herm_eig: matrix is not Hermitian within tolerance");
  const Mat sym = hermitian_part(h);
  Eigen::SelfAdjointEigenSolver<Mat> solver(sym);
  if (solver.info() != Eigen::Success) throw NumericIntegrity("herm_eig: eigensolver failed");
  const Eigen::Index d = sym.rows();
  const RVec& ev = solver.eigenvalues();  // ascending
  const Mat& vecs = solver.eigenvectors();

  Eig out;
  out.values.resize(d);
  out.vectors.resize(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    out.values(i) = ev(d - 1 - i);
    out.vectors.col(i) = vecs.col(d - 1 - i);
  }

  const double scale = std::max(1.0, out.values.cwiseAbs().maxCoeff());
  const double tie = 1e-12 * scale;
  Eigen::Index start = 0;
  while (start < d) {
    Eigen::Index stop = start + 1;
    while (stop < d && out.values(stop - 1) - out.values(stop) <= tie) ++stop;
    const Eigen::Index k = stop - start;
    if (k > 1) {
      Mat block = detail::canonical_basis(out.vectors.middleCols(start, k));
      std::vector<Vec> cols;
      for (Eigen::Index c = 0; c < k; ++c) {
        Vec v = block.col(c);
        detail::fix_phase(v);
        cols.push_back(v);
      }
      std::stable_sort(cols.begin(), cols.end(), detail::lex_greater);
      for (Eigen::Index c = 0; c < k; ++c) out.vectors.col(start + c) = cols[static_cast<std::size_t>(c)];
    } else {
      Vec v = out.vectors.col(start);
      detail::fix_phase(v);
      out.vectors.col(start) = v;
    }
    start = stop;
  }
  return out;
}

inline RVec singular_values(const Mat& m) {
  require(all_finite(m), "singular_values: non-finite entries");
  if (m.size() == 0) return RVec();
  if (std::min(m.rows(), m.cols()) <= 32) return Eigen::JacobiSVD<Mat>(m).singularValues();
  return Eigen::BDCSVD<Mat>(m).singularValues();
}

// Largest singular value.
inline double op_norm(const Mat& m) {
  require(all_finite(m), "op_norm: non-finite entries");
  if (m.size() == 0) return 0.0;
  if (m.rows() == m.cols() && max_abs(m - m.adjoint()) == 0.0) {
    Eigen::SelfAdjointEigenSolver<Mat> solver(m, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().cwiseAbs().maxCoeff();
  }
  return singular_values(m)(0);
}

// Sum of singular values.
inline double trace_norm(const Mat& m) {
  require(all_finite(m), "trace_norm: non-finite entries");
  if (m.size() == 0) return 0.0;
  if (m.rows() == m.cols() && max_abs(m - m.adjoint()) == 0.0) {
    Eigen::SelfAdjointEigenSolver<Mat> solver(m, Eigen::EigenvaluesOnly);
    return solver.eigenvalues().cwiseAbs().sum();
  }
  return singular_values(m).sum();
}

inline Mat kron(const Mat& a, const Mat& b) {
  check_dim(static_cast<std::size_t>(a.rows() * b.rows()), "kron");
  check_dim(static_cast<std::size_t>(a.cols() * b.cols()), "kron");
  Mat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
    }
  }
  return out;
}

inline Mat kron_all(const std::vector<Mat>& factors) {
  if (factors.empty()) return Mat::Identity(1, 1);
  Mat out = factors.front();
  for (std::size_t i = 1; i < factors.size(); ++i) out = kron(out, factors[i]);
  return out;
}

inline Vec kron_vec(const Vec& a, const Vec& b) {
  Vec out(a.size() * b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b;
  return out;
}

inline std::size_t product(const std::vector<std::size_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

// Partial trace over every subsystem not listed in `keep`. Subsystem 0 is the
// most significant factor of the row index.
inline Mat partial_trace(const Mat& m, const std::vector<std::size_t>& dims, std::vector<std::size_t> keep) {
  const std::size_t total = product(dims);
  require(m.rows() == m.cols() && static_cast<std::size_t>(m.rows()) == total,
          "partial_trace: dims do not match the matrix");
  std::sort(keep.begin(), keep.end());
  keep.erase(std::unique(keep.begin(), keep.end()), keep.end());
  for (std::size_t k : keep) require(k < dims.size(), "partial_trace: keep index out of range");

  std::vector<std::size_t> strides(dims.size());
  std::size_t s = 1;
  for (std::size_t i = dims.size(); i-- > 0;) {
    strides[i] = s;
    s *= dims[i];
  }
  std::vector<bool> kept(dims.size(), false);
  for (std::size_t k : keep) kept[k] = true;

  // Offsets of every kept / traced multi-index into the full index.
  auto offsets = [&](bool want_kept) {
    std::vector<std::size_t> offs{0};
    for (std::size_t i = 0; i < dims.size(); ++i) {
      if (kept[i] != want_kept) continue;
      std::vector<std::size_t> next;
      next.reserve(offs.size() * dims[i]);
      for (std::size_t o : offs)
        for (std::size_t v = 0; v < dims[i]; ++v) next.push_back(o + v * strides[i]);
      offs.swap(next);
    }
    return offs;
  };
  const std::vector<std::size_t> ko = offsets(true), to = offsets(false);
  Mat out = Mat::Zero(static_cast<Eigen::Index>(ko.size()), static_cast<Eigen::Index>(ko.size()));
  for (std::size_t r = 0; r < ko.size(); ++r) {
    for (std::size_t c = 0; c < ko.size(); ++c) {
      cplx acc = 0.0;
      for (std::size_t t : to) acc += m(static_cast<Eigen::Index>(ko[r] + t), static_cast<Eigen::Index>(ko[c] + t));
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = acc;
    }
  }
  return out;
}

// SWAP on C^d ⊗ C^d: Σ_ij |i⟩⟨j| ⊗ |j⟩⟨i|.
inline Mat swap_dim(Eigen::Index d) {
  check_dim(static_cast<std::size_t>(d * d), "swap_operator");
  Mat s = Mat::Zero(d * d, d * d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j < d; ++j) s(i * d + j, j * d + i) = 1.0;
  return s;
}

// SWAP between two n-qubit registers.
inline Mat swap_operator(int n) {
  require(n >= 1, "swap_operator: n must be at least 1");
  return swap_dim(Eigen::Index{1} << n);
}

// ∫ dφ (|φ⟩⟨φ|)^{⊗2} = (I + SWAP) / (d(d+1)).
inline Mat haar_moment_2(Eigen::Index d) {
  require(d >= 1, "haar_moment_2: d must be positive");
  return (Mat::Identity(d * d, d * d) + swap_dim(d)) / static_cast<double>(d * (d + 1));
}

// ---- Pauli operators ----

// 0 = I, 1 = X, 2 = Y, 3 = Z.
inline Mat pauli(int which) {
  Mat p = Mat::Zero(2, 2);
  switch (which) {
    case 0: p << 1, 0, 0, 1; break;
    case 1: p << 0, 1, 1, 0; break;
    case 2: p << 0, cplx(0, -1), cplx(0, 1), 0; break;
    case 3: p << 1, 0, 0, -1; break;
    default: throw InvalidInput("pauli: index must be 0..3");
  }
  return p;
}

inline int pauli_from_char(char c) {
  switch (c) {
    case 'I': case 'i': return 0;
    case 'X': case 'x': return 1;
    case 'Y': case 'y': return 2;
    case 'Z': case 'z': return 3;
    default: throw InvalidInput(std::string("unknown Pauli letter '") + c + "'");
  }
}

inline Mat pauli_string(const std::vector<int>& idx) {
  std::vector<Mat> f;
  f.reserve(idx.size());
  for (int i : idx) f.push_back(pauli(i));
  return kron_all(f);
}

inline Mat pauli_string(std::string_view s) {
  require(!s.empty(), "pauli_string: empty string");
  std::vector<int> idx;
  for (char c : s) idx.push_back(pauli_from_char(c));
  return pauli_string(idx);
}

// Base-4 digits of `index`, most significant first.
inline std::vector<int> pauli_digits(std::uint64_t index, int n) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int q = n - 1; q >= 0; --q) {
    idx[static_cast<std::size_t>(q)] = static_cast<int>(index & 3u);
    index >>= 2;
  }
  return idx;
}

// ---- operator wrappers ----

// Hermitian matrix with a lazily computed, shared eigendecomposition.
class HermitianOperator {
 public:
  HermitianOperator() = default;

  explicit HermitianOperator(const Mat& m) {
    require(m.rows() == m.cols() && m.rows() > 0, "HermitianOperator: matrix must be square and non-empty");
    require(all_finite(m), "HermitianOperator: non-finite entries");
    require(is_hermitian(m), "HermitianOperator: matrix is not Hermitian within tolerance");
    m_ = hermitian_part(m);
    cache_ = std::make_shared<Cache>();
  }

  const Mat& matrix() const { return m_; }
  Eigen::Index dim() const { return m_.rows(); }

  const Eig& eig() const {
    std::call_once(cache_->once, [this] { cache_->eig = herm_eig(m_); });
    return cache_->eig;
  }

  double norm() const { return eig().values.cwiseAbs().maxCoeff(); }

 private:
  struct Cache {
    std::once_flag once;
    Eig eig;
  };
  Mat m_;
  std::shared_ptr<Cache> cache_;
};

inline constexpr double kTraceTol = 1e-10;
inline constexpr double kPsdTol = 1e-10;

class DensityOperator {
 public:
  struct Unchecked {};

  DensityOperator() = default;

  explicit DensityOperator(const Mat& m) {
    require(m.rows() == m.cols() && m.rows() > 0, "DensityOperator: matrix must be square and non-empty");
    require(all_finite(m), "DensityOperator: non-finite entries");
    require(is_hermitian(m), "DensityOperator: matrix is not Hermitian within tolerance");
    m_ = hermitian_part(m);
    require(std::abs(m_.trace() - cplx(1.0, 0.0)) <= kTraceTol, "DensityOperator: trace is not 1");
    Eigen::SelfAdjointEigenSolver<Mat> solver(m_, Eigen::EigenvaluesOnly);
    require(solver.eigenvalues().minCoeff() >= -kPsdTol, "DensityOperator: matrix is not positive semidefinite");
  }

  // For outputs of maps already known to be CPTP.
  DensityOperator(const Mat& m, Unchecked) : m_(hermitian_part(m)) {}

  static DensityOperator pure(const Vec& psi) {
    const double nrm = psi.norm();
    require(nrm > 0.0, "DensityOperator::pure: zero vector");
    const Vec v = psi / nrm;
    return DensityOperator(v * v.adjoint(), Unchecked{});
  }

  const Mat& matrix() const { return m_; }
  Eigen::Index dim() const { return m_.rows(); }

 private:
  Mat m_;
};

inline Vec basis_vector(Eigen::Index d, Eigen::Index i) {
  Vec v = Vec::Zero(d);
  v(i) = 1.0;
  return v;
}

// ---- random matrices ----

inline Mat ginibre(Eigen::Index rows, Eigen::Index cols, Stream& rng) {
  Mat g(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) g(i, j) = cplx(rng.normal(), rng.normal()) * std::sqrt(0.5);
  return g;
}

// Haar unitary: QR of a Ginibre matrix with the phases of R's diagonal removed.
inline Mat haar_unitary(Eigen::Index d, Stream& rng) {
  const Mat g = ginibre(d, d, rng);
  Eigen::HouseholderQR<Mat> qr(g);
  Mat q = qr.householderQ() * Mat::Identity(d, d);
  const Mat r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index i = 0; i < d; ++i) {
    const double a = std::abs(r(i, i));
    const cplx phase = a > 0.0 ? r(i, i) / a : cplx(1.0, 0.0);
    q.col(i) *= phase;
  }
  return q;
}

inline Mat random_hermitian(Eigen::Index d, Stream& rng) {
  const Mat g = ginibre(d, d, rng);
  return hermitian_part(g);
}

inline Vec random_pure_state(Eigen::Index d, Stream& rng) {
  Vec v(d);
  for (Eigen::Index i = 0; i < d; ++i) v(i) = cplx(rng.normal(), rng.normal());
  return v / v.norm();
}

// Random mixed state G G† / tr(G G†) with a square Ginibre G.
inline DensityOperator random_density(Eigen::Index d, Stream& rng) {
  const Mat g = ginibre(d, d, rng);
  Mat rho = g * g.adjoint();
  rho /= rho.trace().real();
  return DensityOperator(rho, DensityOperator::Unchecked{});
}

// Matrix of a linear map on d_in × d_in operators (column-stacked vec).
inline Mat superoperator(const std::function<Mat(const Mat&)>& map, Eigen::Index d_in) {
  Mat s;
  for (Eigen::Index b = 0; b < d_in; ++b) {
    for (Eigen::Index a = 0; a < d_in; ++a) {
      Mat e = Mat::Zero(d_in, d_in);
      e(a, b) = 1.0;
      const Mat out = map(e);
      if (s.size() == 0) s = Mat::Zero(out.size(), d_in * d_in);
      s.col(b * d_in + a) = out.reshaped();
    }
  }
  return s;
}

}  // namespace knitsim
