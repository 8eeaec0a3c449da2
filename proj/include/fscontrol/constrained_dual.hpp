#pragma once

// Peak-constrained steering by Lagrangian duality. Multipliers for the two
// one-sided bounds are restricted to nonnegative piecewise-linear functions on
// a uniform grid, which turns the dual into a finite concave quadratic in the
// nodal values (gamma_a, gamma_b). Everything the quadratic needs (hat-function
// Gram, hat moments against the semigroup, bound integrals) is precomputed in
// closed form.

#include <fscontrol/unconstrained_solver.hpp>

#include <limits>

namespace fsc {

template <class Scalar>
struct MultiplierSystem {
  int N_lambda = 0;      // grid intervals
  int m = 0;             // channels; gamma vectors stack per-channel node blocks
  Scalar delta_t = Scalar(0);
  Scalar t_F = Scalar(0);
  Vector<Scalar> mu;            // peak bound per channel, u in [-mu, mu]
  Matrix<Scalar> T_xi_gamma;    // n x m(N+1): columns are semigroup-hat moments
  Matrix<Scalar> P_gamma;       // hat Gram, tridiagonal per channel block
  Vector<Scalar> r_gamma_a;     // lower-bound integrals, -mu (x) hat masses
  Vector<Scalar> r_gamma_b;     // upper-bound integrals, +mu (x) hat masses
  Vector<Scalar> hat_w;         // plain hat masses

  int nodes() const { return N_lambda + 1; }
  int dim() const { return m * (N_lambda + 1); }
};

template <class Scalar>
struct DualSolution {
  Vector<Scalar> gamma_a;
  Vector<Scalar> gamma_b;
  Scalar dual_value = Scalar(0);  // full phi_D, unconstrained cost plus the shift
  long iterations = 0;
  Scalar kkt_residual = Scalar(0);
  bool converged = false;
};

template <class Scalar>
struct DualGradient {
  Scalar value;  // phi_hat_D, the dual shift relative to the unconstrained cost
  Vector<Scalar> grad_a;
  Vector<Scalar> grad_b;
};

template <class Scalar>
MultiplierSystem<Scalar> build_multiplier_system(const GalerkinSystem<Scalar>& sys,
                                                 int N_lambda,
                                                 const std::type_identity_t<Vector<Scalar>>& mu) {
  if (N_lambda < 1)
    throw std::invalid_argument("build_multiplier_system: need at least one interval");
  const int m = sys.channels();
  if (mu.size() != m)
    throw std::invalid_argument("build_multiplier_system: one bound per channel");
  if ((mu.array() <= Scalar(0)).any())
    throw std::invalid_argument("build_multiplier_system: bounds must be positive");

  MultiplierSystem<Scalar> ms;
  ms.N_lambda = N_lambda;
  ms.m = m;
  ms.t_F = sys.t_F;
  ms.mu = mu;
  const Scalar dt = sys.t_F / Scalar(N_lambda);
  ms.delta_t = dt;
  const int nn = ms.nodes();
  const int dim = ms.dim();

  ms.hat_w.resize(dim);
  ms.r_gamma_a.resize(dim);
  ms.r_gamma_b.resize(dim);
  ms.P_gamma = Matrix<Scalar>::Zero(dim, dim);
  for (int c = 0; c < m; ++c)
    for (int j = 0; j < nn; ++j) {
      const int idx = c * nn + j;
      const bool end = j == 0 || j == nn - 1;
      ms.hat_w[idx] = end ? dt / 2 : dt;
      ms.r_gamma_b[idx] = mu[c] * ms.hat_w[idx];
      ms.r_gamma_a[idx] = -ms.r_gamma_b[idx];
      ms.P_gamma(idx, idx) = end ? dt / 3 : 2 * dt / 3;
      if (j + 1 < nn) {
        ms.P_gamma(idx, idx + 1) = dt / 6;
        ms.P_gamma(idx + 1, idx) = dt / 6;
      }
    }

  // Column for node j of channel c: integrate exp(A(t_F - tau)) M e_c against
  // hat_j. Per interval the hat is linear, so the exponential moments make it
  // closed form:
  //   rising half  [t_{j-1}, t_j]:  exp(A(t_F - t_j)) (Phi1 - Phi2 / dt)
  //   falling half [t_j, t_{j+1}]:  exp(A(t_F - t_{j+1})) Phi2 / dt
  // The outer exponentials accumulate as products of exp(A dt) walking j down.
  const int n = sys.size();
  const ExpMoments<Scalar> mom = exp_moments(sys.A, dt);
  const Matrix<Scalar> rise = mom.Phi1 - mom.Phi2 / dt;
  const Matrix<Scalar> fall = mom.Phi2 / dt;
  ms.T_xi_gamma.resize(n, dim);
  Matrix<Scalar> Ej = Matrix<Scalar>::Identity(n, n);  // exp(A (t_F - t_j))
  Matrix<Scalar> Ejnext;                               // exp(A (t_F - t_{j+1}))
  for (int j = N_lambda; j >= 0; --j) {
    Matrix<Scalar> kernel = Matrix<Scalar>::Zero(n, n);
    if (j >= 1) kernel += Ej * rise;
    if (j <= N_lambda - 1) kernel += Ejnext * fall;
    for (int c = 0; c < m; ++c)
      ms.T_xi_gamma.col(c * nn + j) = kernel * sys.M_beta.col(c);
    Ejnext = Ej;
    Ej = Ej * mom.E;
  }
  return ms;
}

namespace detail {

// The dual shift as an explicit quadratic:
//   phi_hat(ga, gb) = -gab^T W gab - 2 v^T gab + 2 r_a^T ga - 2 r_b^T gb
// with gab = ga - gb, W = P - rho_F T^T (I + rho_F G)^{-1} T and v = T^T alpha.
// Assembled once; the solver iterates on this small dense form.
template <class Scalar>
struct DualQuadratic {
  Matrix<Scalar> W;
  Vector<Scalar> v;
  Vector<Scalar> r_a;
  Vector<Scalar> r_b;
  Scalar J_star;  // unconstrained optimal cost, the dual value at gamma = 0
};

template <class Scalar>
DualQuadratic<Scalar> assemble_dual_quadratic(const MultiplierSystem<Scalar>& ms,
                                              const GramOperator<Scalar>& gram,
                                              Scalar rho_F,
                                              const CoeffVector<Scalar>& theta_ro) {
  DualQuadratic<Scalar> q;
  const Eigen::Index cols = ms.T_xi_gamma.cols();
  Matrix<Scalar> QT(theta_ro.size(), cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    QT.col(j) = regularized_inverse_apply(gram, rho_F, ms.T_xi_gamma.col(j));
  q.W = ms.P_gamma - rho_F * ms.T_xi_gamma.transpose() * QT;
  q.W = ((q.W + q.W.transpose()) / Scalar(2)).eval();
  const Vector<Scalar> e = regularized_inverse_apply(gram, rho_F, theta_ro);
  q.v = ms.T_xi_gamma.transpose() * (rho_F * e);
  q.r_a = ms.r_gamma_a;
  q.r_b = ms.r_gamma_b;
  q.J_star = rho_F * theta_ro.dot(e);
  return q;
}

template <class Scalar>
Scalar dual_hat_eval(const DualQuadratic<Scalar>& q, const Vector<Scalar>& ga,
                     const Vector<Scalar>& gb,
                     std::type_identity_t<Vector<Scalar>>* grad_a,
                     std::type_identity_t<Vector<Scalar>>* grad_b) {
  const Vector<Scalar> gab = ga - gb;
  const Vector<Scalar> Wg = q.W * gab;
  const Scalar value = -gab.dot(Wg) - 2 * q.v.dot(gab) + 2 * q.r_a.dot(ga) -
                       2 * q.r_b.dot(gb);
  if (grad_a) *grad_a = -2 * Wg - 2 * q.v + 2 * q.r_a;
  if (grad_b) *grad_b = 2 * Wg + 2 * q.v - 2 * q.r_b;
  return value;
}

// Stationarity defect on the nonnegative orthant: the full gradient where a
// coordinate is interior, only its positive (ascent-feasible) part at zero.
template <class Scalar>
Scalar kkt_defect_sq(const Vector<Scalar>& g, const Vector<Scalar>& grad) {
  Scalar sq = 0;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const Scalar d = g[i] > Scalar(0) ? grad[i] : std::max(grad[i], Scalar(0));
    sq += d * d;
  }
  return sq;
}

}  // namespace detail

template <class Scalar>
DualGradient<Scalar> dual_value_grad(const MultiplierSystem<Scalar>& ms,
                                     const GramOperator<Scalar>& gram, Scalar rho_F,
                                     const CoeffVector<Scalar>& theta_ro,
                                     const std::type_identity_t<Vector<Scalar>>& gamma_a,
                                     const std::type_identity_t<Vector<Scalar>>& gamma_b) {
  if (gamma_a.size() != ms.dim() || gamma_b.size() != ms.dim())
    throw std::invalid_argument("dual_value_grad: multiplier size mismatch");
  const auto q = detail::assemble_dual_quadratic(ms, gram, rho_F, theta_ro);
  DualGradient<Scalar> out;
  out.value = detail::dual_hat_eval(q, gamma_a, gamma_b, &out.grad_a, &out.grad_b);
  return out;
}

// Projected-gradient ascent from gamma = 0 with Armijo backtracking; the
// initial step is 1/L with L taken from power iteration on W (the gradient
// map over the stacked pair has norm 4 lambda_max(W)). Terminates on the
// projected-gradient norm. Hitting max_iter is not fatal: the best iterate is
// returned with converged = false, since the value settles orders of
// magnitude before the residual does.
template <class Scalar>
DualSolution<Scalar> solve_dual(const MultiplierSystem<Scalar>& ms,
                                const GramOperator<Scalar>& gram, Scalar rho_F,
                                const CoeffVector<Scalar>& theta_ro,
                                Scalar tol = Scalar(1e-8), long max_iter = 200000) {
  if (!(tol > Scalar(0)))
    throw std::invalid_argument("solve_dual: tolerance must be positive");
  const auto q = detail::assemble_dual_quadratic(ms, gram, rho_F, theta_ro);
  const Eigen::Index dim = q.v.size();

  Vector<Scalar> z = Vector<Scalar>::Ones(dim).normalized();
  Scalar lam = Scalar(0);
  for (int it = 0; it < 200; ++it) {
    const Vector<Scalar> Wz = q.W * z;
    lam = Wz.norm();
    if (lam == Scalar(0)) break;
    z = Wz / lam;
  }
  const Scalar L = std::max(Scalar(4) * lam, std::numeric_limits<Scalar>::min());

  Vector<Scalar> ga = Vector<Scalar>::Zero(dim);
  Vector<Scalar> gb = Vector<Scalar>::Zero(dim);
  Vector<Scalar> grad_a(dim), grad_b(dim);
  Scalar value = detail::dual_hat_eval(q, ga, gb, &grad_a, &grad_b);

  DualSolution<Scalar> best;
  best.gamma_a = ga;
  best.gamma_b = gb;
  best.dual_value = q.J_star + value;

  const Scalar sigma = Scalar(1e-4);
  long iter = 0;
  Scalar residual = std::sqrt(detail::kkt_defect_sq(ga, grad_a) +
                              detail::kkt_defect_sq(gb, grad_b));
  best.kkt_residual = residual;
  while (residual > tol && iter < max_iter) {
    Scalar step = Scalar(1) / L;
    Vector<Scalar> na, nb;
    Scalar nv;
    bool advanced = false;
    for (int halvings = 0; halvings < 60; ++halvings) {
      na = (ga + step * grad_a).cwiseMax(Scalar(0));
      nb = (gb + step * grad_b).cwiseMax(Scalar(0));
      nv = detail::dual_hat_eval(q, na, nb, nullptr, nullptr);
      const Scalar incr = grad_a.dot(na - ga) + grad_b.dot(nb - gb);
      if (nv >= value + sigma * incr) {
        advanced = true;
        break;
      }
      step /= 2;
    }
    if (!advanced) break;
    ga.swap(na);
    gb.swap(nb);
    value = detail::dual_hat_eval(q, ga, gb, &grad_a, &grad_b);
    ++iter;
    residual = std::sqrt(detail::kkt_defect_sq(ga, grad_a) +
                         detail::kkt_defect_sq(gb, grad_b));
    if (q.J_star + value >= best.dual_value) {
      best.gamma_a = ga;
      best.gamma_b = gb;
      best.dual_value = q.J_star + value;
      best.kkt_residual = residual;
    }
  }
  best.iterations = iter;
  best.converged = residual <= tol;
  if (best.converged) best.kkt_residual = residual;
  return best;
}

// The primal law induced by a multiplier pair: the kernel coefficient shifts
// by the multiplier moments, and the multiplier itself rides on top of the
// kernel part as a piecewise-linear correction.
template <class Scalar>
ControlLaw<Scalar> recover_primal(const MultiplierSystem<Scalar>& ms,
                                  const GramOperator<Scalar>& gram, Scalar rho_F,
                                  const GalerkinSystem<Scalar>& sys,
                                  const DualSolution<Scalar>& dual) {
  if (dual.gamma_a.size() != ms.dim() || dual.gamma_b.size() != ms.dim())
    throw std::invalid_argument("recover_primal: multiplier size mismatch");
  const Vector<Scalar> gab = dual.gamma_a - dual.gamma_b;
  const Vector<Scalar> xi = ms.T_xi_gamma * gab;

  ControlLaw<Scalar> law;
  law.alpha = rho_F * regularized_inverse_apply(gram, rho_F, sys.theta_ro - xi);
  law.rho_u = Scalar(1) / rho_F;
  law.sys = &sys;

  SampledSignal<Scalar> corr;
  corr.times.setLinSpaced(ms.nodes(), Scalar(0), ms.t_F);
  corr.values.resize(ms.nodes(), ms.m);
  for (int c = 0; c < ms.m; ++c)
    for (int j = 0; j < ms.nodes(); ++j)
      corr.values(j, c) = gab[c * ms.nodes() + j];
  law.correction = std::move(corr);
  return law;
}

// Feasible rounding: sample the kernel part of the law (the multiplier add-on
// is dropped, unless asked for) and clamp each channel to its bound.
template <class Scalar>
SampledSignal<Scalar> clip_feasible(const ControlLaw<Scalar>& law,
                                    const std::type_identity_t<Vector<Scalar>>& mu,
                                    int n_samples, bool clip_full = false) {
  if (n_samples < 1000)
    throw std::invalid_argument("clip_feasible: need at least 1000 samples");
  const auto& sys = *law.sys;
  if (mu.size() != sys.channels())
    throw std::invalid_argument("clip_feasible: one bound per channel");

  SampledSignal<Scalar> out;
  out.times.setLinSpaced(n_samples, Scalar(0), sys.t_F);
  out.values.resize(n_samples, sys.channels());
  for (int i = 0; i < n_samples; ++i) {
    Vector<Scalar> u = input_response_F(sys, out.times[i]) * law.alpha;
    if (clip_full && law.correction) u += eval_signal(*law.correction, out.times[i]);
    for (int c = 0; c < sys.channels(); ++c)
      out.values(i, c) = std::clamp(u[c], -mu[c], mu[c]);
  }
  return out;
}

template <class Scalar>
SolveReport<Scalar> constrained_report(const SampledSignal<Scalar>& u_R,
                                       const GalerkinSystem<Scalar>& sys,
                                       const GramOperator<Scalar>& gram, Scalar rho_F,
                                       const DualSolution<Scalar>& dual) {
  detail::check_signal(u_R, sys.t_F, sys.channels(), "constrained_report");
  (void)gram;

  Scalar l2sq = 0;
  for (Eigen::Index s = 0; s + 1 < u_R.times.size(); ++s) {
    const Scalar dt = u_R.times[s + 1] - u_R.times[s];
    const auto u0 = u_R.values.row(s);
    const auto u1 = u_R.values.row(s + 1);
    l2sq += dt / 3 * (u0.squaredNorm() + u0.dot(u1) + u1.squaredNorm());
  }

  const CoeffVector<Scalar> e = sys.theta_ro - simulate_controlled(sys, u_R);

  SolveReport<Scalar> rep{};
  rep.l2_norm_u = std::sqrt(l2sq);
  rep.linf_norm_u = u_R.values.cwiseAbs().maxCoeff();
  rep.final_error_projected = e.norm();
  rep.cost_J = l2sq + rho_F * e.squaredNorm();
  rep.duality_gap = rep.cost_J - dual.dual_value;
  if (*rep.duality_gap < -Scalar(1e-8) * std::max(Scalar(1), std::abs(rep.cost_J)))
    throw std::runtime_error("constrained_report: weak duality violated");
  return rep;
}

}  // namespace fsc
