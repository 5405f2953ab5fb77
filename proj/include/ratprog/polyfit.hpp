#pragma once

// Degree-bounded multivariate polynomials and rational functions, plus
// least-squares parameter estimation via singular value decomposition.
//
// A rational-function fit solves the homogeneous system A c = 0 where row k
// is [num_monomials(x_k), -y_k * den_monomials(x_k)]; the minimizer of
// ||A c|| subject to ||c|| = 1 is the right singular vector for the smallest
// singular value.  Sample matrices over structured grids are often
// numerically rank-deficient, so ranks and truncation are always reported.

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ratprog::poly {

struct DimensionMismatch : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DenominatorNearZero : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DegenerateFit : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct SvdFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline constexpr double kDefaultRankTol = 1e-10;

// Per-variable exponent caps for the numerator and denominator bases.
struct DegreeBounds {
  std::vector<int> num, den;
};

// All exponent tuples componentwise <= bounds, in graded-lexicographic
// order: ascending total degree, ties broken lexicographically (first
// variable most significant).  The constant term always comes first, and the
// ordering is a pure function of the bounds (stable across runs/platforms).
inline std::vector<std::vector<int>> monomial_basis(
    const std::vector<int>& bounds) {
  for (int b : bounds)
    if (b < 0) throw std::invalid_argument("negative degree bound");
  std::vector<std::vector<int>> tuples{{}};
  for (int b : bounds) {
    std::vector<std::vector<int>> next;
    next.reserve(tuples.size() * (b + 1));
    for (const auto& t : tuples)
      for (int e = 0; e <= b; ++e) {
        next.push_back(t);
        next.back().push_back(e);
      }
    tuples = std::move(next);
  }
  std::stable_sort(tuples.begin(), tuples.end(),
                   [](const std::vector<int>& a, const std::vector<int>& b) {
                     int ga = std::accumulate(a.begin(), a.end(), 0);
                     int gb = std::accumulate(b.begin(), b.end(), 0);
                     if (ga != gb) return ga < gb;
                     return a < b;
                   });
  return tuples;
}

struct Polynomial {
  std::vector<std::string> variables;
  std::vector<std::vector<int>> basis;  // exponent tuples, graded-lex
  std::vector<double> coeffs;           // aligned to basis
};

// p/q over a shared variable list.
struct RationalFunction {
  Polynomial num, den;
};

struct FitReport {
  double residual_norm = 0.0;
  int numerical_rank = 0;
  std::vector<double> singular_values;  // non-increasing
  bool truncated = false;
  std::optional<double> holdout_relative_error;
};

namespace detail {

inline double eval_monomial(const std::vector<int>& exponents,
                            const std::vector<double>& point) {
  double m = 1.0;
  for (std::size_t i = 0; i < exponents.size(); ++i) {
    double p = 1.0;
    for (int e = 0; e < exponents[i]; ++e) p *= point[i];
    m *= p;
  }
  return m;
}

}  // namespace detail

inline double eval_poly(const Polynomial& p, const std::vector<double>& point) {
  if (point.size() != p.variables.size())
    throw DimensionMismatch("eval_poly: point has " +
                            std::to_string(point.size()) + " coordinates, " +
                            "polynomial has " +
                            std::to_string(p.variables.size()) + " variables");
  double acc = 0.0;
  for (std::size_t k = 0; k < p.basis.size(); ++k)
    acc += p.coeffs[k] * detail::eval_monomial(p.basis[k], point);
  return acc;
}

inline double eval_ratfunc(const RationalFunction& f,
                           const std::vector<double>& point) {
  double pnum = eval_poly(f.num, point);
  double pden = eval_poly(f.den, point);
  if (std::fabs(pden) < 1e-12 * std::max(1.0, std::fabs(pnum)))
    throw DenominatorNearZero("denominator magnitude " +
                              std::to_string(std::fabs(pden)) +
                              " too small at evaluation point");
  return pnum / pden;
}

// Sample data for fitting: point k is a row of `points`, with value[k].
struct PointValueSet {
  std::vector<std::vector<double>> points;
  std::vector<double> values;
};

// Row k encodes p(x_k) - y_k * q(x_k) = 0.
inline Eigen::MatrixXd build_sample_matrix(const PointValueSet& samples,
                                           const DegreeBounds& bounds) {
  auto num_basis = monomial_basis(bounds.num);
  auto den_basis = monomial_basis(bounds.den);
  const std::size_t m = samples.points.size();
  Eigen::MatrixXd A(m, num_basis.size() + den_basis.size());
  for (std::size_t k = 0; k < m; ++k) {
    const auto& x = samples.points[k];
    for (std::size_t j = 0; j < num_basis.size(); ++j)
      A(k, j) = detail::eval_monomial(num_basis[j], x);
    for (std::size_t j = 0; j < den_basis.size(); ++j)
      A(k, num_basis.size() + j) =
          -samples.values[k] * detail::eval_monomial(den_basis[j], x);
  }
  return A;
}

struct SvdResult {
  Eigen::MatrixXd U;      // thin
  Eigen::VectorXd sigma;  // non-increasing, >= 0
  Eigen::MatrixXd V;      // full (needed for nullspace vectors)
};

inline SvdResult svd(const Eigen::MatrixXd& A) {
  if (!A.allFinite()) throw SvdFailure("svd: matrix has non-finite entries");
  Eigen::JacobiSVD<Eigen::MatrixXd> solver(
      A, Eigen::ComputeThinU | Eigen::ComputeFullV);
  if (solver.info() != Eigen::Success)
    throw SvdFailure("svd: decomposition did not converge");
  return {solver.matrixU(), solver.singularValues(), solver.matrixV()};
}

inline int numerical_rank(const Eigen::VectorXd& sigma, double rank_tol) {
  if (sigma.size() == 0 || sigma(0) <= 0.0) return 0;
  int r = 0;
  for (Eigen::Index i = 0; i < sigma.size(); ++i)
    if (sigma(i) >= rank_tol * sigma(0)) ++r;
  return r;
}

namespace detail {

// Builds the normalized rational function from a stacked coefficient vector
// (numerator coefficients followed by denominator coefficients).
// Normalization: unit 2-norm with the first nonzero denominator coefficient
// positive.  Throws DegenerateFit when the denominator vanishes identically.
inline RationalFunction make_ratfunc_from_coeffs(
    const std::vector<std::string>& variables,
    const std::vector<std::vector<int>>& num_basis,
    const std::vector<std::vector<int>>& den_basis, Eigen::VectorXd c) {
  const Eigen::Index nn = static_cast<Eigen::Index>(num_basis.size());
  const Eigen::Index nd = static_cast<Eigen::Index>(den_basis.size());
  double norm = c.norm();
  if (norm == 0.0) throw DegenerateFit("all-zero coefficient vector");
  c /= norm;
  Eigen::Index first_den = -1;
  for (Eigen::Index j = 0; j < nd; ++j) {
    if (std::fabs(c(nn + j)) > 1e-10) {
      first_den = j;
      break;
    }
  }
  if (first_den < 0)
    throw DegenerateFit("recovered denominator is identically zero");
  if (c(nn + first_den) < 0.0) c = -c;

  RationalFunction f;
  f.num.variables = variables;
  f.num.basis = num_basis;
  f.num.coeffs.assign(c.data(), c.data() + nn);
  f.den.variables = variables;
  f.den.basis = den_basis;
  f.den.coeffs.assign(c.data() + nn, c.data() + nn + nd);
  return f;
}

}  // namespace detail

// Scales every nonzero column of A to unit 2-norm in place and returns the
// per-column factors (raw coordinates = factors .* equilibrated coordinates).
inline Eigen::VectorXd equilibrate_columns(Eigen::MatrixXd& A) {
  Eigen::VectorXd col_scale = Eigen::VectorXd::Ones(A.cols());
  for (Eigen::Index j = 0; j < A.cols(); ++j) {
    double n = A.col(j).norm();
    if (n > 0.0) {
      col_scale(j) = 1.0 / n;
      A.col(j) *= col_scale(j);
    }
  }
  return col_scale;
}

namespace detail {

// Minimizes ||A_eq c||^2 over coefficient vectors whose denominator is
// strictly positive at every sample point, with the scale fixed by
// sum_k q(x_k) = m.  This is a convex program (quadratic objective, one
// linear equality, linear inequalities); it is solved with a log-barrier
// Newton method started from `start_raw`, which must have q > 0 at all
// samples.  `den_values` holds the raw denominator monomials (m x nd),
// `col_scale` maps equilibrated to raw coordinates.  Returns the raw
// coefficient vector, or an empty vector when no progress could be made
// (caller keeps its unconstrained candidate).
inline Eigen::VectorXd positive_den_minimizer(
    const Eigen::MatrixXd& A_eq, const Eigen::VectorXd& col_scale,
    const Eigen::MatrixXd& den_values, Eigen::Index num_size,
    const Eigen::VectorXd& start_raw) {
  const Eigen::Index n = A_eq.cols();
  const Eigen::Index nd = den_values.cols();
  const Eigen::Index m = A_eq.rows();

  // Denominator-value map in equilibrated coordinates, padded with a zero
  // numerator block so all algebra runs over full-length vectors.
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(m, n);
  for (Eigen::Index j = 0; j < nd; ++j)
    Q.col(num_size + j) = den_values.col(j) * col_scale(num_size + j);
  Eigen::VectorXd g = Q.colwise().sum();  // normalization row: g^T c = m

  Eigen::VectorXd c = start_raw.cwiseQuotient(col_scale);
  Eigen::VectorXd q = Q * c;
  if (!(q.minCoeff() > 0.0)) return {};
  double s = static_cast<double>(m) / g.dot(c);
  if (!(s > 0.0) || !std::isfinite(s)) return {};
  c *= s;
  q *= s;

  const Eigen::MatrixXd H0 = A_eq.transpose() * A_eq;
  double mu = std::max((A_eq * c).squaredNorm(), 1e-30) / static_cast<double>(m);
  auto phi = [&](const Eigen::VectorXd& v, const Eigen::VectorXd& qv) {
    return (A_eq * v).squaredNorm() - mu * qv.array().log().sum();
  };

  Eigen::MatrixXd K(n + 1, n + 1);
  Eigen::VectorXd rhs(n + 1);
  for (int outer = 0; outer < 16; ++outer) {
    for (int inner = 0; inner < 40; ++inner) {
      Eigen::VectorXd qinv = q.cwiseInverse();
      Eigen::VectorXd grad = 2.0 * (H0 * c) - mu * (Q.transpose() * qinv);
      Eigen::MatrixXd H =
          2.0 * H0 + mu * Q.transpose() *
                         qinv.array().square().matrix().asDiagonal() * Q;
      K.setZero();
      K.topLeftCorner(n, n) = H;
      K.topRightCorner(n, 1) = g;
      K.bottomLeftCorner(1, n) = g.transpose();
      rhs.head(n) = -grad;
      rhs(n) = 0.0;
      Eigen::VectorXd sol = K.ldlt().solve(rhs);
      if (!sol.allFinite()) return {};
      Eigen::VectorXd dc = sol.head(n);
      double decrement = -grad.dot(dc);
      if (!(decrement > 1e-14 * (1.0 + std::fabs(phi(c, q))))) break;
      double phi0 = phi(c, q);
      bool stepped = false;
      for (double alpha = 1.0; alpha > 1e-18; alpha *= 0.5) {
        Eigen::VectorXd cn = c + alpha * dc;
        Eigen::VectorXd qn = Q * cn;
        if (qn.minCoeff() > 0.0 &&
            phi(cn, qn) <= phi0 - 1e-4 * alpha * decrement) {
          c = cn;
          q = qn;
          stepped = true;
          break;
        }
      }
      if (!stepped) break;
    }
    mu *= 0.1;
  }
  Eigen::VectorXd raw = c.cwiseProduct(col_scale);
  if (!raw.allFinite()) return {};
  return raw;
}

}  // namespace detail

// Homogeneous least-squares fit of a rational function to (point, value)
// samples.  The coefficient vector is the right singular vector for the
// smallest singular value; for a homogeneous system one vanishing singular
// value IS the sought solution, so `truncated` flags deficiency beyond it
// (numerical rank < columns - 1).
//
// Denominator positivity safeguard: the algebraic residual p - y*q says
// nothing about where q vanishes, and with several variables and noisy data
// its unconstrained minimizer can develop a sign-changing denominator inside
// the sampled region -- a spurious pole that makes the fit useless for
// evaluation even though its residual is tiny.  The sampled quantities the
// fit is meant for are finite, so a usable denominator cannot change sign
// across the samples.  When the unconstrained candidate's denominator is
// sign-mixed (or pinches within kDenPinchTrigger of zero relative to its
// mean magnitude) the same least-squares problem is re-solved over the
// positive-denominator cone, followed by a few reweighted passes (rows
// scaled by 1/(max(1,|y|)*q_prev)) that align the objective with relative
// function error.  Clean in-class data never trips the safeguard, so exact
// recovery is byte-for-byte unchanged.
inline constexpr double kDenPinchTrigger = 1e-4;
inline constexpr int kReweightRounds = 3;

inline std::pair<RationalFunction, FitReport> fit_rational(
    const PointValueSet& samples, const std::vector<std::string>& variables,
    const DegreeBounds& bounds, double rank_tol = kDefaultRankTol) {
  if (samples.points.empty())
    throw std::invalid_argument("fit_rational: no samples");
  if (samples.points.size() != samples.values.size())
    throw DimensionMismatch("fit_rational: points/values size mismatch");
  auto num_basis = monomial_basis(bounds.num);
  auto den_basis = monomial_basis(bounds.den);
  const Eigen::Index nn = static_cast<Eigen::Index>(num_basis.size());
  const Eigen::Index nd = static_cast<Eigen::Index>(den_basis.size());
  const Eigen::Index m = static_cast<Eigen::Index>(samples.points.size());

  Eigen::MatrixXd A_raw = build_sample_matrix(samples, bounds);

  // Column equilibration.  Monomial columns routinely span many orders of
  // magnitude, and the homogeneous objective measures the absolute algebraic
  // residual p(x) - y*q(x), so on noisy data the raw unit-norm minimizer can
  // shrink the residual by collapsing onto the small-magnitude columns
  // (numerator and denominator both near zero -- a spurious fit) instead of
  // matching the data's structure.  Scaling each column to unit norm makes
  // the minimization scale-free; diagonal scaling preserves nullspaces
  // exactly, so noise-free recovery is unchanged, and it makes the fit
  // exactly scale-invariant at the function level.
  Eigen::MatrixXd A = A_raw;
  Eigen::VectorXd col_scale = equilibrate_columns(A);

  SvdResult dec = svd(A);
  const Eigen::Index cols = A.cols();

  Eigen::VectorXd c = dec.V.col(cols - 1).cwiseProduct(col_scale);

  // Positivity safeguard (see the contract comment above).
  Eigen::MatrixXd den_values(m, nd);
  for (Eigen::Index k = 0; k < m; ++k)
    for (Eigen::Index j = 0; j < nd; ++j)
      den_values(k, j) = detail::eval_monomial(den_basis[j], samples.points[k]);
  Eigen::VectorXd q = den_values * c.tail(nd);
  bool sign_mixed = q.minCoeff() < 0.0 && q.maxCoeff() > 0.0;
  double mean_mag = q.cwiseAbs().mean();
  bool pinched =
      mean_mag > 0.0 && q.cwiseAbs().minCoeff() < kDenPinchTrigger * mean_mag;
  if (sign_mixed || pinched) {
    // Strictly feasible start: least-squares numerator over denominator 1
    // (the constant monomial leads the graded-lex denominator basis).
    Eigen::MatrixXd V(m, nn);
    Eigen::VectorXd y(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      for (Eigen::Index j = 0; j < nn; ++j)
        V(k, j) = detail::eval_monomial(num_basis[j], samples.points[k]);
      y(k) = samples.values[k];
    }
    SvdResult vd = svd(V);
    int vrank = numerical_rank(vd.sigma, rank_tol);
    Eigen::VectorXd uty = vd.U.transpose() * y;
    Eigen::VectorXd start = Eigen::VectorXd::Zero(cols);
    for (int i = 0; i < vrank; ++i)
      start.head(nn) += vd.V.col(i) * (uty(i) / vd.sigma(i));
    start(nn) = 1.0;

    Eigen::VectorXd refined =
        detail::positive_den_minimizer(A, col_scale, den_values, nn, start);
    for (int round = 0; refined.size() > 0 && round < kReweightRounds;
         ++round) {
      Eigen::VectorXd qprev = den_values * refined.tail(nd);
      if (!(qprev.minCoeff() > 0.0)) break;
      Eigen::MatrixXd Aw = A_raw;
      for (Eigen::Index k = 0; k < m; ++k)
        Aw.row(k) /=
            std::max(1.0, std::fabs(samples.values[k])) * qprev(k);
      Eigen::VectorXd scale_w = equilibrate_columns(Aw);
      Eigen::VectorXd next =
          detail::positive_den_minimizer(Aw, scale_w, den_values, nn, refined);
      if (next.size() == 0) break;
      refined = next;
    }
    if (refined.size() > 0) c = refined;
  }

  RationalFunction f =
      detail::make_ratfunc_from_coeffs(variables, num_basis, den_basis, c);

  FitReport report;
  report.singular_values.assign(dec.sigma.data(),
                                dec.sigma.data() + dec.sigma.size());
  report.numerical_rank = numerical_rank(dec.sigma, rank_tol);
  report.truncated = report.numerical_rank < static_cast<int>(cols) - 1;
  report.residual_norm =
      dec.sigma.size() >= cols ? dec.sigma(cols - 1) : 0.0;
  return {std::move(f), std::move(report)};
}

// Inhomogeneous specialization (denominator fixed to 1): minimum-norm
// least-squares solution of V x = y via the SVD pseudo-inverse with the same
// relative rank tolerance.
inline std::pair<Polynomial, FitReport> fit_polynomial(
    const PointValueSet& samples, const std::vector<std::string>& variables,
    const std::vector<int>& bounds, double rank_tol = kDefaultRankTol) {
  if (samples.points.empty())
    throw std::invalid_argument("fit_polynomial: no samples");
  auto basis = monomial_basis(bounds);
  const std::size_t m = samples.points.size();
  Eigen::MatrixXd A(m, basis.size());
  Eigen::VectorXd y(m);
  for (std::size_t k = 0; k < m; ++k) {
    for (std::size_t j = 0; j < basis.size(); ++j)
      A(k, j) = detail::eval_monomial(basis[j], samples.points[k]);
    y(k) = samples.values[k];
  }
  SvdResult dec = svd(A);
  int rank = numerical_rank(dec.sigma, rank_tol);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(A.cols());
  Eigen::VectorXd uty = dec.U.transpose() * y;
  for (int i = 0; i < rank; ++i)
    x += dec.V.col(i) * (uty(i) / dec.sigma(i));

  Polynomial p;
  p.variables = variables;
  p.basis = basis;
  p.coeffs.assign(x.data(), x.data() + x.size());

  FitReport report;
  report.singular_values.assign(dec.sigma.data(),
                                dec.sigma.data() + dec.sigma.size());
  report.numerical_rank = rank;
  report.truncated = rank < static_cast<int>(A.cols());
  report.residual_norm = (A * x - y).norm();
  return {std::move(p), std::move(report)};
}

struct PoisednessReport {
  int rank = 0;
  int basis_size = 0;
  double condition_estimate = 0.0;  // sigma_1 / sigma_rank
};

// Rank diagnostics of the pure numerator-basis sample (Vandermonde) matrix:
// points are poised for interpolation in the basis iff the rank equals the
// basis size.
inline PoisednessReport poisedness_report(
    const std::vector<std::vector<double>>& points,
    const std::vector<int>& bounds, double rank_tol = kDefaultRankTol) {
  if (points.empty()) throw std::invalid_argument("poisedness_report: no points");
  auto basis = monomial_basis(bounds);
  Eigen::MatrixXd V(points.size(), basis.size());
  for (std::size_t k = 0; k < points.size(); ++k)
    for (std::size_t j = 0; j < basis.size(); ++j)
      V(k, j) = detail::eval_monomial(basis[j], points[k]);
  SvdResult dec = svd(V);
  PoisednessReport rep;
  rep.basis_size = static_cast<int>(basis.size());
  rep.rank = numerical_rank(dec.sigma, rank_tol);
  rep.condition_estimate =
      rep.rank > 0 ? dec.sigma(0) / dec.sigma(rep.rank - 1)
                   : std::numeric_limits<double>::infinity();
  return rep;
}

}  // namespace ratprog::poly
