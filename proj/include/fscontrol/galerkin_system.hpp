#pragma once

// Truncated generator A_K and input matrix M_beta from the bilinear form of
// the parabolic operator, plus matrix exponentials and exact responses of the
// resulting linear ODE system under piecewise-linear sampled inputs.

#include <fscontrol/spectral_basis.hpp>

#include <unsupported/Eigen/MatrixFunctions>

#include <optional>
#include <type_traits>
#include <variant>

namespace fsc {

// Raised when an assembled generator has a spectrum touching the closed right
// half-plane; downstream exponentials and Gramians assume strict stability.
struct SpectralInstability : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class Scalar>
struct HeatCoefficients {
  Scalar k_alpha;  // constant diffusivity
};

// Variable-coefficient operator -(a u')' + b u' + c u, 1D only.
template <class Scalar>
struct General1DCoefficients {
  ScalarField<Scalar> a;
  ScalarField<Scalar> b;
  ScalarField<Scalar> c;
};

template <class Scalar>
using OperatorCoefficients =
    std::variant<HeatCoefficients<Scalar>, General1DCoefficients<Scalar>>;

// Piecewise-linear interpolant between samples; the canonical concrete form of
// a control (or forcing) signal on [0, t_F]. Column count is the number of
// channels (or state coefficients, for forcing data).
template <class Scalar>
struct SampledSignal {
  Vector<Scalar> times;
  Matrix<Scalar> values;  // times.size() rows
};

template <class Scalar>
struct GalerkinSystem {
  SpectralBasis<Scalar> basis;
  Matrix<Scalar> A;       // n_K x n_K generator
  Matrix<Scalar> M_beta;  // n_K x m actuator projections
  Scalar t_F = Scalar(1);
  CoeffVector<Scalar> theta_ro;  // target minus free response, projected
  bool A_diagonal = false;

  int channels() const { return static_cast<int>(M_beta.cols()); }
  int size() const { return static_cast<int>(A.rows()); }
};

namespace detail {

template <class Scalar>
bool is_diagonal(const Matrix<Scalar>& A) {
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < A.cols(); ++j)
      if (i != j && A(i, j) != Scalar(0)) return false;
  return true;
}

template <class Scalar>
void check_stable(const Matrix<Scalar>& A, const char* who) {
  const Eigen::EigenSolver<Matrix<Scalar>> es(A, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success)
    throw SpectralInstability(std::string(who) + ": eigenvalue computation failed");
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    if (es.eigenvalues()[i].real() >= Scalar(0))
      throw SpectralInstability(std::string(who) +
                                ": generator has an eigenvalue with nonnegative real part");
}

}  // namespace detail

template <class Scalar>
Matrix<Scalar> assemble_operator(const OperatorCoefficients<Scalar>& coeffs,
                                 const SpectralBasis<Scalar>& basis) {
  const int n = basis.size();

  if (const auto* heat = std::get_if<HeatCoefficients<Scalar>>(&coeffs)) {
    if (!(heat->k_alpha > Scalar(0)))
      throw std::invalid_argument("assemble_operator: diffusivity must be positive");
    // Sine modes diagonalize the constant-coefficient Laplacian exactly.
    Matrix<Scalar> A = Matrix<Scalar>::Zero(n, n);
    A.diagonal() = -heat->k_alpha * basis.eigenvalue_magnitudes;
    return A;
  }

  const auto& gen = std::get<General1DCoefficients<Scalar>>(coeffs);
  if (basis.domain.dim() != 1)
    throw std::invalid_argument("assemble_operator: variable coefficients are 1D only");

  std::vector<Scalar> breaks = gen.a.breakpoints[0];
  breaks.insert(breaks.end(), gen.b.breakpoints[0].begin(), gen.b.breakpoints[0].end());
  breaks.insert(breaks.end(), gen.c.breakpoints[0].begin(), gen.c.breakpoints[0].end());
  const int panels = std::max(basis.per_axis_order, 8);

  // Weak form: row k, column l holds -B[phi_l, phi_k] with
  // B[u, v] = int a u'v' + b u'v + c u v.
  Matrix<Scalar> A(n, n);
  for (int k = 0; k < n; ++k)
    for (int l = 0; l < n; ++l) {
      ScalarField<Scalar> integrand;
      integrand.breakpoints[0] = breaks;
      integrand.eval = [&](const std::array<Scalar, 2>& x) {
        const Scalar ul = eval_mode(basis, l, x);
        const Scalar dul = eval_mode_deriv(basis, l, x, 0);
        const Scalar vk = eval_mode(basis, k, x);
        const Scalar dvk = eval_mode_deriv(basis, k, x, 0);
        return gen.a.eval(x) * dul * dvk + gen.b.eval(x) * dul * vk +
               gen.c.eval(x) * ul * vk;
      };
      A(k, l) = -integrate(integrand, basis.domain, panels);
    }
  detail::check_stable(A, "assemble_operator");
  return A;
}

template <class Scalar>
Matrix<Scalar> assemble_input_matrix(const std::vector<ScalarField<Scalar>>& actuators,
                                     const SpectralBasis<Scalar>& basis) {
  if (actuators.empty())
    throw std::invalid_argument("assemble_input_matrix: at least one actuator required");
  Matrix<Scalar> M(basis.size(), static_cast<Eigen::Index>(actuators.size()));
  for (std::size_t i = 0; i < actuators.size(); ++i)
    M.col(static_cast<Eigen::Index>(i)) = project_field(actuators[i], basis);
  return M;
}

// exp(A t); diagonal matrices entrywise, dense ones by Pade scaling-and-squaring.
template <class Scalar>
Matrix<Scalar> matrix_exponential(const Matrix<Scalar>& A, Scalar t) {
  if (detail::is_diagonal(A)) {
    Matrix<Scalar> E = Matrix<Scalar>::Zero(A.rows(), A.cols());
    E.diagonal() = (A.diagonal() * t).array().exp();
    return E;
  }
  return (A * t).exp();
}

// First two exponential moments over a step of width delta:
//   Phi1 = int_0^delta exp(A s) ds,   Phi2 = int_0^delta exp(A s) s ds.
// They make integrals of exp(A(t-tau)) against piecewise-linear functions
// closed-form. The scalar path guards the small-|a*delta| cancellation with a
// series; the dense path uses exp(A delta) and one LU of A.
template <class Scalar>
struct ExpMoments {
  Matrix<Scalar> E;     // exp(A delta)
  Matrix<Scalar> Phi1;
  Matrix<Scalar> Phi2;
};

namespace detail {

template <class Scalar>
void scalar_exp_moments(Scalar a, Scalar delta, Scalar& E, Scalar& phi1, Scalar& phi2) {
  const Scalar z = a * delta;
  E = std::exp(z);
  if (std::abs(z) < Scalar(1e-3)) {
    phi1 = delta * (Scalar(1) + z / Scalar(2) + z * z / Scalar(6) +
                    z * z * z / Scalar(24) + z * z * z * z / Scalar(120));
    phi2 = delta * delta *
           (Scalar(0.5) + z / Scalar(3) + z * z / Scalar(8) + z * z * z / Scalar(30) +
            z * z * z * z / Scalar(144));
  } else {
    phi1 = std::expm1(z) / a;
    phi2 = (delta * E - phi1) / a;
  }
}

}  // namespace detail

template <class Scalar>
ExpMoments<Scalar> exp_moments(const Matrix<Scalar>& A, Scalar delta) {
  const Eigen::Index n = A.rows();
  ExpMoments<Scalar> m;
  if (detail::is_diagonal(A)) {
    m.E = Matrix<Scalar>::Zero(n, n);
    m.Phi1 = Matrix<Scalar>::Zero(n, n);
    m.Phi2 = Matrix<Scalar>::Zero(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
      detail::scalar_exp_moments(A(i, i), delta, m.E(i, i), m.Phi1(i, i), m.Phi2(i, i));
    return m;
  }
  m.E = (A * delta).exp();
  const Eigen::PartialPivLU<Matrix<Scalar>> lu(A);
  m.Phi1 = lu.solve(m.E - Matrix<Scalar>::Identity(n, n));
  m.Phi2 = lu.solve(delta * m.E - m.Phi1);
  return m;
}

namespace detail {

template <class Scalar>
void check_signal(const SampledSignal<Scalar>& s, Scalar t_F, Eigen::Index cols,
                  const char* who) {
  if (s.times.size() < 2 || s.values.rows() != s.times.size())
    throw std::invalid_argument(std::string(who) + ": malformed sample grid");
  if (cols >= 0 && s.values.cols() != cols)
    throw std::invalid_argument(std::string(who) + ": wrong number of signal channels");
  const Scalar tol = std::max(Scalar(1), t_F) * Scalar(1e-12);
  if (std::abs(s.times[0]) > tol || std::abs(s.times[s.times.size() - 1] - t_F) > tol)
    throw std::invalid_argument(std::string(who) + ": samples must span [0, t_F]");
  for (Eigen::Index i = 0; i + 1 < s.times.size(); ++i)
    if (!(s.times[i + 1] > s.times[i]))
      throw std::invalid_argument(std::string(who) + ": sample times must increase");
}

// int_0^{t_F} exp(A(t_F - tau)) f(tau) dtau for piecewise-linear f given by
// rows of the signal (already in state space). Exact per segment:
// with tau = t1 - w, f = f1 + (f0 - f1) w / delta,
//   contribution = exp(A(t_F - t1)) [Phi1 f1 + (Phi2 / delta)(f0 - f1)].
// Segments are walked backward so exp(A(t_F - t1)) accumulates by products of
// the per-segment exponentials.
template <class Scalar>
Vector<Scalar> pwl_convolution(const Matrix<Scalar>& A, bool diagonal, Scalar t_F,
                               const SampledSignal<Scalar>& f) {
  const Eigen::Index n = A.rows();
  Vector<Scalar> acc = Vector<Scalar>::Zero(n);
  if (diagonal) {
    const auto a = A.diagonal();
    for (Eigen::Index s = f.times.size() - 1; s >= 1; --s) {
      const Scalar t0 = f.times[s - 1], t1 = f.times[s];
      const Scalar delta = t1 - t0;
      for (Eigen::Index i = 0; i < n; ++i) {
        Scalar E, phi1, phi2;
        scalar_exp_moments(a[i], delta, E, phi1, phi2);
        const Scalar tail = std::exp(a[i] * (t_F - t1));
        acc[i] += tail * (phi1 * f.values(s, i) +
                          phi2 / delta * (f.values(s - 1, i) - f.values(s, i)));
      }
    }
    return acc;
  }
  Matrix<Scalar> tail = Matrix<Scalar>::Identity(n, n);  // exp(A (t_F - t1))
  if (std::abs(t_F - f.times[f.times.size() - 1]) > Scalar(0))
    tail = matrix_exponential(A, t_F - f.times[f.times.size() - 1]);
  for (Eigen::Index s = f.times.size() - 1; s >= 1; --s) {
    const Scalar delta = f.times[s] - f.times[s - 1];
    const ExpMoments<Scalar> m = exp_moments(A, delta);
    acc += tail * (m.Phi1 * f.values.row(s).transpose() +
                   m.Phi2 / delta *
                       (f.values.row(s - 1) - f.values.row(s)).transpose());
    tail = tail * m.E;
  }
  return acc;
}

}  // namespace detail

// Linear interpolation of a sampled signal at an arbitrary time, clamped to
// the sample span at the ends.
template <class Scalar>
Vector<Scalar> eval_signal(const SampledSignal<Scalar>& s, Scalar tau) {
  if (s.times.size() < 2 || s.values.rows() != s.times.size())
    throw std::invalid_argument("eval_signal: malformed sample grid");
  if (tau <= s.times[0]) return s.values.row(0).transpose();
  const Eigen::Index last = s.times.size() - 1;
  if (tau >= s.times[last]) return s.values.row(last).transpose();
  const Scalar* begin = s.times.data();
  const Eigen::Index hi = std::upper_bound(begin, begin + last + 1, tau) - begin;
  const Scalar t0 = s.times[hi - 1], t1 = s.times[hi];
  const Scalar w = (tau - t0) / (t1 - t0);
  return ((Scalar(1) - w) * s.values.row(hi - 1) + w * s.values.row(hi)).transpose();
}

// Final state exp(A t_F) g + convolution of the (optional) forcing data, all
// in coefficient space. The scalar type is keyed on the system so callers can
// pass raw Eigen expressions for g.
template <class Scalar>
CoeffVector<Scalar> free_response(const GalerkinSystem<Scalar>& sys,
                                  const std::type_identity_t<CoeffVector<Scalar>>& g_coeffs,
                                  const std::type_identity_t<
                                      std::optional<SampledSignal<Scalar>>>& f_coeffs =
                                      std::nullopt) {
  if (g_coeffs.size() != sys.size())
    throw std::invalid_argument("free_response: initial data has wrong size");
  CoeffVector<Scalar> out = matrix_exponential(sys.A, sys.t_F) * g_coeffs;
  if (f_coeffs) {
    detail::check_signal(*f_coeffs, sys.t_F, sys.size(), "free_response");
    out += detail::pwl_convolution(sys.A, sys.A_diagonal, sys.t_F, *f_coeffs);
  }
  return out;
}

template <class Scalar>
CoeffVector<Scalar> compute_theta_ro(const CoeffVector<Scalar>& theta_r_coeffs,
                                     const CoeffVector<Scalar>& free) {
  if (theta_r_coeffs.size() != free.size())
    throw std::invalid_argument("compute_theta_ro: coefficient sizes differ");
  return theta_r_coeffs - free;
}

// Final state reached from zero under the piecewise-linear control u; the
// independent check that a closed-form control law lands where predicted.
template <class Scalar>
CoeffVector<Scalar> simulate_controlled(const GalerkinSystem<Scalar>& sys,
                                        const SampledSignal<Scalar>& u) {
  detail::check_signal(u, sys.t_F, sys.channels(), "simulate_controlled");
  SampledSignal<Scalar> forced;
  forced.times = u.times;
  forced.values = u.values * sys.M_beta.transpose();  // rows become M*u(t_k)
  return detail::pwl_convolution(sys.A, sys.A_diagonal, sys.t_F, forced);
}

// Convenience assembly of a full system in one call.
template <class Scalar>
GalerkinSystem<Scalar> build_system(const OperatorCoefficients<Scalar>& coeffs,
                                    const SpectralBasis<Scalar>& basis,
                                    const std::vector<ScalarField<Scalar>>& actuators,
                                    Scalar t_F, const CoeffVector<Scalar>& theta_ro) {
  if (!(t_F > Scalar(0)))
    throw std::invalid_argument("build_system: horizon must be positive");
  GalerkinSystem<Scalar> sys;
  sys.basis = basis;
  sys.A = assemble_operator(coeffs, basis);
  sys.A_diagonal = detail::is_diagonal(sys.A);
  sys.M_beta = assemble_input_matrix(actuators, basis);
  sys.t_F = t_F;
  sys.theta_ro = theta_ro;
  if (theta_ro.size() != sys.size())
    throw std::invalid_argument("build_system: target coefficients have wrong size");
  return sys;
}

}  // namespace fsc
