#pragma once

// Closed-form solution of the quadratic steering problem. The optimal control
// lives in the span of the input-response kernel, u(tau) = F(tau) alpha, with
// alpha obtained from one regularized solve against the Gram matrix. Reports
// cost, control norms, the projected final-state error, and (in 1D) an upper
// bound on what the truncated modes can contribute.

#include <fscontrol/gram_operator.hpp>

namespace fsc {

struct IllConditioned : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A control law u(tau) = F(tau) alpha + correction(tau). The correction is a
// piecewise-linear add-on used by the constrained solver (multiplier times
// 1/rho_u); the unconstrained law has none. Holds a pointer to the system it
// was solved on, which must outlive the law.
template <class Scalar>
struct ControlLaw {
  CoeffVector<Scalar> alpha;
  std::optional<SampledSignal<Scalar>> correction;
  const GalerkinSystem<Scalar>* sys = nullptr;
  Scalar rho_u = Scalar(1);
};

template <class Scalar>
struct SolveReport {
  Scalar cost_J;
  Scalar l2_norm_u;
  Scalar linf_norm_u;
  Scalar final_error_projected;
  std::optional<Scalar> truncation_bound;
  std::optional<Scalar> duality_gap;
};

// Applies (I + rho_F G)^{-1} through the shifted eigendecomposition
// (1 + delta_S) I + rho_F G = V S V^T, then V (S - delta_S)^{-1} V^T. The
// shift cancels exactly; its role is to keep the factorized matrix away from
// singularity when G is numerically rank-deficient.
template <class Scalar>
CoeffVector<Scalar> regularized_inverse_apply(const GramOperator<Scalar>& gram,
                                              Scalar rho_F,
                                              const std::type_identity_t<CoeffVector<Scalar>>& v) {
  if (!(rho_F > Scalar(0)))
    throw std::invalid_argument("regularized_inverse_apply: rho_F must be positive");
  Matrix<Scalar> shifted = rho_F * gram.G;
  shifted.diagonal().array() += Scalar(1) + gram.delta_S;
  const Eigen::SelfAdjointEigenSolver<Matrix<Scalar>> es(shifted);
  if (es.info() != Eigen::Success)
    throw IllConditioned("regularized_inverse_apply: eigendecomposition failed");
  const Vector<Scalar> sigma = es.eigenvalues().array() - gram.delta_S;
  if ((sigma.array() <= Scalar(0)).any())
    throw IllConditioned("regularized_inverse_apply: shifted spectrum not positive");
  return es.eigenvectors() *
         (es.eigenvectors().transpose() * v).cwiseQuotient(sigma);
}

template <class Scalar>
ControlLaw<Scalar> solve_unconstrained(const GalerkinSystem<Scalar>& sys,
                                       const GramOperator<Scalar>& gram, Scalar rho_F) {
  ControlLaw<Scalar> law;
  law.alpha = rho_F * regularized_inverse_apply(gram, rho_F, sys.theta_ro);
  law.sys = &sys;
  law.rho_u = Scalar(1) / rho_F;
  return law;
}

template <class Scalar>
Vector<Scalar> eval_control(const ControlLaw<Scalar>& law, Scalar tau) {
  const auto& sys = *law.sys;
  Vector<Scalar> u = input_response_F(sys, tau) * law.alpha;
  if (law.correction) u += eval_signal(*law.correction, tau);
  return u;
}

// Exact terminal state reached from rest: G alpha for the kernel part plus
// the convolution of the piecewise-linear correction.
template <class Scalar>
CoeffVector<Scalar> final_state(const ControlLaw<Scalar>& law,
                                const GalerkinSystem<Scalar>& sys,
                                const GramOperator<Scalar>& gram) {
  CoeffVector<Scalar> out = gram.G * law.alpha;
  if (law.correction) out += simulate_controlled(sys, *law.correction);
  return out;
}

namespace detail {

// Squared L2 norm of the law over the horizon, all pieces exact: the kernel
// part is the Gram quadratic form, the cross term reuses the convolution
// identity int F(tau)^T w(tau) dtau = final state under w, and the correction
// energy is the closed-form integral of a piecewise-linear square.
template <class Scalar>
Scalar control_l2_sq(const ControlLaw<Scalar>& law, const GalerkinSystem<Scalar>& sys,
                     const GramOperator<Scalar>& gram) {
  Scalar sq = law.alpha.dot(gram.G * law.alpha);
  if (law.correction) {
    const auto& w = *law.correction;
    sq += Scalar(2) * law.alpha.dot(simulate_controlled(sys, w));
    for (Eigen::Index s = 0; s + 1 < w.times.size(); ++s) {
      const Scalar dt = w.times[s + 1] - w.times[s];
      const auto w0 = w.values.row(s);
      const auto w1 = w.values.row(s + 1);
      sq += dt / Scalar(3) * (w0.squaredNorm() + w0.dot(w1) + w1.squaredNorm());
    }
  }
  return sq;
}

}  // namespace detail

// The cost reported here is the one the experiment tables use: squared control
// energy plus rho_F times the squared projected terminal error.
template <class Scalar>
SolveReport<Scalar> report(const ControlLaw<Scalar>& law, const GalerkinSystem<Scalar>& sys,
                           const GramOperator<Scalar>& gram, Scalar rho_F,
                           int n_time_samples = 10000) {
  if (n_time_samples < 1000)
    throw std::invalid_argument("report: need at least 1000 time samples");

  SolveReport<Scalar> rep{};
  const Scalar l2sq = detail::control_l2_sq(law, sys, gram);
  rep.l2_norm_u = std::sqrt(std::max(Scalar(0), l2sq));

  Scalar linf = Scalar(0);
  for (int i = 0; i < n_time_samples; ++i) {
    const Scalar tau = sys.t_F * Scalar(i) / Scalar(n_time_samples - 1);
    linf = std::max(linf, eval_control(law, tau).template lpNorm<Eigen::Infinity>());
  }
  rep.linf_norm_u = linf;

  const CoeffVector<Scalar> e = sys.theta_ro - final_state(law, sys, gram);
  rep.final_error_projected = e.norm();
  rep.cost_J = l2sq + rho_F * e.squaredNorm();
  return rep;
}

// Upper bound on the full (untruncated) terminal error for 1D constant-
// diffusivity systems: the modes beyond K see an input no larger than the
// actuator tail over the spectral gap, plus the target tail itself. Tail
// norms come from Parseval against full-field quadrature.
template <class Scalar>
Scalar truncation_bound_1d(const GalerkinSystem<Scalar>& sys,
                           const ScalarField<Scalar>& beta,
                           const ScalarField<Scalar>& theta_ro_field,
                           const ControlLaw<Scalar>& law) {
  const auto& basis = sys.basis;
  if (basis.domain.dim() != 1)
    throw std::invalid_argument("truncation_bound_1d: 1D systems only");
  if (!sys.A_diagonal)
    throw std::invalid_argument("truncation_bound_1d: constant-diffusivity generator required");
  const Scalar k_alpha = -sys.A(0, 0) / basis.eigenvalue_magnitudes[0];
  if ((sys.A.diagonal() + k_alpha * basis.eigenvalue_magnitudes).norm() >
      Scalar(1e-10) * sys.A.diagonal().norm())
    throw std::invalid_argument("truncation_bound_1d: generator is not a scaled Laplacian");

  const int panels = 64;
  auto tail_norm = [&](const ScalarField<Scalar>& f) {
    ScalarField<Scalar> fsq;
    fsq.breakpoints = f.breakpoints;
    fsq.eval = [&f](const std::array<Scalar, 2>& x) {
      const Scalar v = f.eval(x);
      return v * v;
    };
    const Scalar full = integrate(fsq, basis.domain, panels);
    const Scalar captured = project_field(f, basis, panels).squaredNorm();
    return std::sqrt(std::max(Scalar(0), full - captured));
  };

  const Scalar tail_beta = tail_norm(beta);
  const Scalar tail_theta = tail_norm(theta_ro_field);
  const Scalar gap_freq = Scalar(basis.per_axis_order + 1) *
                          Scalar(EIGEN_PI) / basis.domain.lengths[0];
  const auto gram = build_gram(sys);
  const Scalar l2_u =
      std::sqrt(std::max(Scalar(0), detail::control_l2_sq(law, sys, gram)));
  const Scalar reach = tail_beta / (std::sqrt(k_alpha) * gap_freq) * l2_u;
  return (reach + tail_theta) * (reach + tail_theta);
}

}  // namespace fsc
