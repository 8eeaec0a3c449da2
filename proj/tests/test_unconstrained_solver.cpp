#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fscontrol/unconstrained_solver.hpp>

#include <cmath>
#include <random>

using namespace fsc;

namespace {

const double kPi = EIGEN_PI;

GalerkinSystem<double> scalar_system(double a, double m, double t_F) {
  GalerkinSystem<double> sys;
  sys.basis = build_basis(BoxDomain<double>{{1.0}}, 1);
  sys.A = Matrix<double>::Constant(1, 1, a);
  sys.M_beta = Matrix<double>::Constant(1, 1, m);
  sys.t_F = t_F;
  sys.theta_ro = Vector<double>::Ones(1);
  sys.A_diagonal = true;
  return sys;
}

// Unit square, K_a = 5, centered square actuator, frustum target: the setup
// of the 2D experiment rows.
const GalerkinSystem<double>& paper_2d_system() {
  static const GalerkinSystem<double> sys = [] {
    const BoxDomain<double> dom{{1.0, 1.0}};
    const auto basis = build_basis(dom, 5);
    const auto target = project_field(frustum_field(dom, 2.0), basis, 48);
    return build_system<double>(HeatCoefficients<double>{1.0}, basis,
                                {indicator_box(dom, {0.25, 0.25}, {0.75, 0.75})}, 1.0,
                                target);
  }();
  return sys;
}

const GramOperator<double>& paper_2d_gram() {
  static const GramOperator<double> gram = build_gram(paper_2d_system());
  return gram;
}

GramOperator<double> gram_from(const Matrix<double>& G) {
  GramOperator<double> gram;
  gram.G = G;
  gram.delta_S = 1e-3;
  return gram;
}

}  // namespace

TEST_CASE("regularized inverse: identity limit, scalar value, dense agreement") {
  const auto zero = gram_from(Matrix<double>::Zero(3, 3));
  const Vector<double> v = (Vector<double>(3) << 1.0, -2.0, 0.5).finished();
  CHECK((regularized_inverse_apply(zero, 4.0, v) - v).norm() < 1e-13);

  const double Gs = (1.0 - std::exp(-2.0)) / 2.0;
  const auto scalar = gram_from(Matrix<double>::Constant(1, 1, Gs));
  CHECK(regularized_inverse_apply(scalar, 1.0, Vector<double>::Ones(1))(0) ==
        doctest::Approx(1.0 / (1.0 + Gs)).epsilon(1e-12));

  std::mt19937 rng(5);
  std::normal_distribution<double> dist;
  Matrix<double> R(8, 8);
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) R(i, j) = dist(rng);
  const Matrix<double> psd = R.transpose() * R;
  Vector<double> w(8);
  for (int i = 0; i < 8; ++i) w[i] = dist(rng);

  auto gram = gram_from(psd);
  const double rho_F = 37.0;
  const Matrix<double> lhs =
      Matrix<double>::Identity(8, 8) + rho_F * psd;
  const Vector<double> direct = lhs.lu().solve(w);
  CHECK((regularized_inverse_apply(gram, rho_F, w) - direct).norm() <
        1e-10 * direct.norm());

  // the shift cancels exactly, so its size must not matter
  auto gram_small_shift = gram;
  gram_small_shift.delta_S = 1e-6;
  CHECK((regularized_inverse_apply(gram, rho_F, w) -
         regularized_inverse_apply(gram_small_shift, rho_F, w))
            .norm() < 1e-10 * direct.norm());

  CHECK_THROWS_AS(regularized_inverse_apply(gram, 0.0, w), std::invalid_argument);
  CHECK_THROWS_AS(regularized_inverse_apply(gram, -2.0, w), std::invalid_argument);
}

TEST_CASE("unconstrained solve: zero target and the scalar oracle chain") {
  auto sys = scalar_system(-1.0, 1.0, 1.0);
  sys.theta_ro = Vector<double>::Zero(1);
  const auto gram = build_gram(sys);
  const auto trivial = solve_unconstrained(sys, gram, 1.0);
  CHECK(trivial.alpha.norm() == 0.0);
  CHECK(eval_control(trivial, 0.3).norm() == 0.0);

  const auto fixture = scalar_system(-1.0, 1.0, 1.0);
  const auto gram_f = build_gram(fixture);
  const auto law = solve_unconstrained(fixture, gram_f, 1.0);
  const double Gs = (1.0 - std::exp(-2.0)) / 2.0;
  const double alpha = 1.0 / (1.0 + Gs);
  CHECK(law.alpha(0) == doctest::Approx(alpha).epsilon(1e-12));
  CHECK(law.rho_u == 1.0);
  CHECK_FALSE(law.correction.has_value());
  for (double tau : {0.0, 0.5, 1.0})
    CHECK(eval_control(law, tau)(0) ==
          doctest::Approx(alpha * std::exp(-(1.0 - tau))).epsilon(1e-12));
  CHECK_THROWS_AS(eval_control(law, 1.5), std::invalid_argument);
}

TEST_CASE("optimality residual, energy bound, cost decrease on the 2D fixture") {
  const auto& sys = paper_2d_system();
  const auto& gram = paper_2d_gram();
  const double rho_F = 8000.0;
  const auto law = solve_unconstrained(sys, gram, rho_F);

  const Vector<double> residual =
      law.alpha / rho_F + gram.G * law.alpha - sys.theta_ro;
  CHECK(residual.norm() <= 1e-9 * sys.theta_ro.norm());

  const double l2sq = law.alpha.dot(gram.G * law.alpha);
  CHECK(l2sq <= rho_F * sys.theta_ro.squaredNorm());

  const auto rep = report(law, sys, gram, rho_F, 2000);
  CHECK(rep.cost_J < rho_F * sys.theta_ro.squaredNorm());
}

TEST_CASE("2D report reproduces the frozen experiment rows") {
  const auto& sys = paper_2d_system();
  const auto& gram = paper_2d_gram();

  const auto law8 = solve_unconstrained(sys, gram, 8000.0);
  const auto rep8 = report(law8, sys, gram, 8000.0);
  CHECK(rep8.cost_J == doctest::Approx(4982.8187).epsilon(1e-6));
  CHECK(rep8.l2_norm_u == doctest::Approx(45.438281).epsilon(1e-6));
  CHECK(rep8.linf_norm_u == doctest::Approx(446.17392).epsilon(1e-6));
  CHECK(rep8.final_error_projected == doctest::Approx(0.60396413).epsilon(1e-6));

  // the closed-form error display agrees with the simulate-side route
  const Vector<double> e_display =
      regularized_inverse_apply(gram, 8000.0, sys.theta_ro);
  CHECK(rep8.final_error_projected ==
        doctest::Approx(e_display.norm()).epsilon(1e-10));

  const auto law20 = solve_unconstrained(sys, gram, 20000.0);
  const auto rep20 = report(law20, sys, gram, 20000.0);
  CHECK(rep20.cost_J == doctest::Approx(8135.4096).epsilon(1e-6));
  CHECK(rep20.l2_norm_u == doctest::Approx(64.098851).epsilon(1e-6));
  CHECK(rep20.linf_norm_u == doctest::Approx(691.10645).epsilon(1e-6));
  CHECK(rep20.final_error_projected == doctest::Approx(0.44870630).epsilon(1e-6));

  // more weight on the terminal error buys error down at higher control cost
  const auto rep2 = report(solve_unconstrained(sys, gram, 2000.0), sys, gram, 2000.0);
  CHECK(rep2.final_error_projected > rep8.final_error_projected);
  CHECK(rep8.final_error_projected > rep20.final_error_projected);
  CHECK(rep2.l2_norm_u < rep8.l2_norm_u);
  CHECK(rep8.l2_norm_u < rep20.l2_norm_u);
}

TEST_CASE("report guards and the zero law") {
  const auto& sys = paper_2d_system();
  const auto& gram = paper_2d_gram();
  ControlLaw<double> zero;
  zero.alpha = Vector<double>::Zero(sys.size());
  zero.sys = &sys;
  zero.rho_u = 1.0 / 8000.0;

  CHECK_THROWS_AS(report(zero, sys, gram, 8000.0, 999), std::invalid_argument);

  const auto rep = report(zero, sys, gram, 8000.0, 1000);
  CHECK(rep.l2_norm_u == 0.0);
  CHECK(rep.linf_norm_u == 0.0);
  CHECK(rep.final_error_projected ==
        doctest::Approx(sys.theta_ro.norm()).epsilon(1e-12));
  CHECK(rep.cost_J ==
        doctest::Approx(8000.0 * sys.theta_ro.squaredNorm()).epsilon(1e-12));
}

TEST_CASE("kernel evaluation agrees with adjoint ODE propagation") {
  const auto& sys = paper_2d_system();
  const auto& gram = paper_2d_gram();
  const auto law = solve_unconstrained(sys, gram, 8000.0);

  // Integrate y' = A^T y from y(0) = alpha with classic RK4; then
  // u(t_F - s) = M^T y(s). No matrix exponentials on this route.
  const Matrix<double> At = sys.A.transpose();
  Vector<double> y = law.alpha;
  const int samples = 101;
  const int sub = 4000;
  const double h = sys.t_F / ((samples - 1) * sub);
  double max_diff = (sys.M_beta.transpose() * y -
                     eval_control(law, sys.t_F))
                        .cwiseAbs()
                        .maxCoeff();
  for (int j = 1; j < samples; ++j) {
    for (int i = 0; i < sub; ++i) {
      const Vector<double> k1 = At * y;
      const Vector<double> k2 = At * (y + 0.5 * h * k1);
      const Vector<double> k3 = At * (y + 0.5 * h * k2);
      const Vector<double> k4 = At * (y + h * k3);
      y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    const double s = sys.t_F * j / (samples - 1);
    const Vector<double> u_ode = sys.M_beta.transpose() * y;
    const Vector<double> u_direct = eval_control(law, sys.t_F - s);
    max_diff = std::max(max_diff, (u_ode - u_direct).cwiseAbs().maxCoeff());
  }
  CHECK(max_diff < 1e-9);
}

TEST_CASE("sampled control reproduces the predicted terminal state") {
  const auto& sys = paper_2d_system();
  const auto& gram = paper_2d_gram();
  const auto law = solve_unconstrained(sys, gram, 8000.0);

  const int segments = 262144;
  SampledSignal<double> u;
  u.times.setLinSpaced(segments + 1, 0.0, sys.t_F);
  u.values.resize(segments + 1, sys.channels());
  for (int i = 0; i <= segments; ++i)
    u.values.row(i) = eval_control(law, u.times[i]).transpose();

  const Vector<double> reached = simulate_controlled(sys, u);
  const Vector<double> predicted = gram.G * law.alpha;
  CHECK((reached - predicted).norm() < 1e-6 * predicted.norm());
}

TEST_CASE("piecewise-linear correction enters evaluation, energy, error") {
  const auto sys = scalar_system(-1.0, 1.0, 1.0);
  const auto gram = build_gram(sys);

  ControlLaw<double> law;
  law.alpha = Vector<double>::Constant(1, 0.7);
  law.sys = &sys;
  law.rho_u = 1.0;
  SampledSignal<double> w;
  w.times = (Vector<double>(3) << 0.0, 0.5, 1.0).finished();
  w.values = (Matrix<double>(3, 1) << 0.2, -0.1, 0.4).finished();
  law.correction = w;

  // midpoint of the first segment: kernel part plus hand interpolation
  const double expect =
      0.7 * std::exp(-(1.0 - 0.25)) + (0.2 + (-0.1 - 0.2) * 0.5);
  CHECK(eval_control(law, 0.25)(0) == doctest::Approx(expect).epsilon(1e-12));

  // interpolation clamps outside the grid and is exact at nodes
  CHECK(eval_signal(w, -1.0)(0) == 0.2);
  CHECK(eval_signal(w, 2.0)(0) == 0.4);
  CHECK(eval_signal(w, 0.5)(0) == -0.1);

  // energy against a fine trapezoid scan of |u|^2
  const auto rep = report(law, sys, gram, 1.0, 20001);
  const int nodes = 200001;
  double trap = 0.0;
  double prev = std::pow(eval_control(law, 0.0)(0), 2);
  for (int i = 1; i < nodes; ++i) {
    const double tau = sys.t_F * i / (nodes - 1);
    const double cur = std::pow(eval_control(law, tau)(0), 2);
    trap += 0.5 * (prev + cur) * sys.t_F / (nodes - 1);
    prev = cur;
  }
  CHECK(rep.l2_norm_u * rep.l2_norm_u == doctest::Approx(trap).epsilon(1e-6));

  // error term folds in the correction's contribution to the final state
  const double reached = final_state(law, sys, gram)(0);
  CHECK(rep.final_error_projected ==
        doctest::Approx(std::abs(1.0 - reached)).epsilon(1e-12));
  CHECK(rep.cost_J == doctest::Approx(rep.l2_norm_u * rep.l2_norm_u +
                                      std::pow(1.0 - reached, 2))
                          .epsilon(1e-12));
}

TEST_CASE("truncation bound: tail identities, monotonicity, guards") {
  const BoxDomain<double> dom{{2.0}};
  const auto beta_in_span = sine_mode_field(dom, {1});
  const auto beta_ind = indicator_box(dom, {0.9}, {1.1});
  const auto target = indicator_box(dom, {0.5}, {1.5});

  auto make_sys = [&](int K) {
    const auto basis = build_basis(dom, K);
    return build_system<double>(HeatCoefficients<double>{1.0}, basis, {beta_ind}, 1.0,
                                project_field(target, basis, 64));
  };

  const auto sys5 = make_sys(5);
  const auto gram5 = build_gram(sys5);

  // target tail by hand: Parseval with analytic sine coefficients
  const double L = 2.0;
  double captured = 0.0;
  for (int k = 1; k <= 5; ++k) {
    const double c = std::sqrt(2.0 / L) * L / (k * kPi) *
                     (std::cos(k * kPi * 0.5 / L) - std::cos(k * kPi * 1.5 / L));
    captured += c * c;
  }
  const double tail_theta_sq = (1.5 - 0.5) - captured;

  ControlLaw<double> zero;
  zero.alpha = Vector<double>::Zero(sys5.size());
  zero.sys = &sys5;
  CHECK(truncation_bound_1d(sys5, beta_ind, target, zero) ==
        doctest::Approx(tail_theta_sq).epsilon(1e-8));

  // actuator inside the span: only the target tail survives, any law
  auto sys_span = build_system<double>(HeatCoefficients<double>{1.0},
                                       build_basis(dom, 5), {beta_in_span}, 1.0,
                                       project_field(target, build_basis(dom, 5), 64));
  const auto gram_span = build_gram(sys_span);
  const auto law_span = solve_unconstrained(sys_span, gram_span, 2000.0);
  CHECK(truncation_bound_1d(sys_span, beta_in_span, target, law_span) ==
        doctest::Approx(tail_theta_sq).epsilon(1e-8));

  const auto law5 = solve_unconstrained(sys5, gram5, 2000.0);
  const auto sys20 = make_sys(20);
  const auto gram20 = build_gram(sys20);
  const auto law20 = solve_unconstrained(sys20, gram20, 2000.0);
  const double bound5 = truncation_bound_1d(sys5, beta_ind, target, law5);
  const double bound20 = truncation_bound_1d(sys20, beta_ind, target, law20);
  CHECK(bound20 < bound5);

  const auto& sys2d = paper_2d_system();
  ControlLaw<double> zero2d;
  zero2d.alpha = Vector<double>::Zero(sys2d.size());
  zero2d.sys = &sys2d;
  CHECK_THROWS_AS(truncation_bound_1d(sys2d, beta_ind, target, zero2d),
                  std::invalid_argument);

  General1DCoefficients<double> gc{constant_field(1.0), constant_field(0.3),
                                   constant_field(0.1)};
  const auto basis6 = build_basis(dom, 6);
  const auto sys_dense = build_system<double>(gc, basis6, {beta_ind}, 1.0,
                                              Vector<double>::Zero(basis6.size()));
  ControlLaw<double> zero_dense;
  zero_dense.alpha = Vector<double>::Zero(sys_dense.size());
  zero_dense.sys = &sys_dense;
  CHECK_THROWS_AS(truncation_bound_1d(sys_dense, beta_ind, target, zero_dense),
                  std::invalid_argument);
}
