#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <fscontrol/gram_operator.hpp>

#include <cmath>
#include <random>

using namespace fsc;

namespace {

GalerkinSystem<double> scalar_system(double a, double m, double t_F) {
  GalerkinSystem<double> sys;
  sys.basis = build_basis(BoxDomain<double>{{1.0}}, 1);
  sys.A = Matrix<double>::Constant(1, 1, a);
  sys.M_beta = Matrix<double>::Constant(1, 1, m);
  sys.t_F = t_F;
  sys.theta_ro = Vector<double>::Zero(1);
  sys.A_diagonal = true;
  return sys;
}

GalerkinSystem<double> paper_2d_system() {
  const BoxDomain<double> dom{{1.0, 1.0}};
  const auto basis = build_basis(dom, 5);
  const auto act = indicator_box(dom, {0.25, 0.25}, {0.75, 0.75});
  return build_system<double>(HeatCoefficients<double>{1.0}, basis, {act}, 1.0,
                              Vector<double>::Zero(basis.size()));
}

GalerkinSystem<double> random_dense_system(int n, int m, double t_F, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> dist;
  GalerkinSystem<double> sys;
  sys.basis = build_basis(BoxDomain<double>{{1.0}}, 1);
  sys.A.resize(n, n);
  sys.M_beta.resize(n, m);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) sys.A(i, j) = 0.5 * dist(rng);
    for (int j = 0; j < m; ++j) sys.M_beta(i, j) = dist(rng);
  }
  sys.A.diagonal().array() -= 4.0;
  sys.t_F = t_F;
  sys.theta_ro = Vector<double>::Zero(n);
  sys.A_diagonal = false;
  return sys;
}

// Closed form of the diagonal-generator Gram integral, written out separately
// from the Lyapunov route.
Matrix<double> diag_gram_closed_form(const GalerkinSystem<double>& sys) {
  const auto a = sys.A.diagonal();
  const int n = sys.size();
  Matrix<double> G = Matrix<double>::Zero(n, n);
  for (int c = 0; c < sys.channels(); ++c)
    for (int k = 0; k < n; ++k)
      for (int l = 0; l < n; ++l) {
        const double s = a[k] + a[l];
        G(k, l) += sys.M_beta(k, c) * sys.M_beta(l, c) *
                   (std::exp(s * sys.t_F) - 1.0) / s;
      }
  return G;
}

}  // namespace

TEST_CASE("input response kernel: terminal value, scalar value, range guard") {
  const auto sys = paper_2d_system();
  CHECK((input_response_F(sys, 1.0) - sys.M_beta.transpose()).norm() < 1e-14);
  CHECK_THROWS_AS(input_response_F(sys, -0.1), std::invalid_argument);
  CHECK_THROWS_AS(input_response_F(sys, 1.1), std::invalid_argument);

  const auto scalar = scalar_system(-1.0, 1.0, 1.0);
  CHECK(input_response_F(scalar, 0.0)(0, 0) ==
        doctest::Approx(std::exp(-1.0)).epsilon(1e-14));
}

TEST_CASE("input response magnitudes shrink with elapsed time") {
  const auto sys = paper_2d_system();
  Matrix<double> prev = input_response_F(sys, 0.0).cwiseAbs();
  for (double tau : {0.25, 0.5, 0.75, 1.0}) {
    const Matrix<double> cur = input_response_F(sys, tau).cwiseAbs();
    CHECK(((cur - prev).array() >= -1e-15).all());
    prev = cur;
  }
}

TEST_CASE("terminal cross matrix: scalar value and degenerate cases") {
  const auto scalar = scalar_system(-1.0, 1.0, 1.0);
  CHECK(terminal_cross_matrix(scalar)(0, 0) ==
        doctest::Approx(std::exp(-2.0) - 1.0).epsilon(1e-14));

  auto frozen = scalar_system(-1.0, 1.0, 1.0);
  frozen.t_F = 0.0;
  CHECK(terminal_cross_matrix(frozen).norm() == 0.0);

  auto unforced = scalar_system(-1.0, 0.0, 1.0);
  CHECK(terminal_cross_matrix(unforced).norm() == 0.0);
}

TEST_CASE("lyapunov solve: scalar fixture and singular inputs") {
  const Matrix<double> A = Matrix<double>::Constant(1, 1, -1.0);
  const Matrix<double> Mc = Matrix<double>::Constant(1, 1, std::exp(-2.0) - 1.0);
  CHECK(solve_lyapunov(A, Mc)(0, 0) ==
        doctest::Approx((1.0 - std::exp(-2.0)) / 2.0).epsilon(1e-14));
  CHECK(solve_lyapunov(A, Matrix<double>::Zero(1, 1)).norm() == 0.0);

  Matrix<double> mixed = Matrix<double>::Zero(2, 2);
  mixed.diagonal() << -1.0, 1.0;
  CHECK_THROWS_AS(solve_lyapunov(mixed, Matrix<double>::Identity(2, 2)),
                  SingularLyapunov);

  Matrix<double> nilpotent = Matrix<double>::Zero(2, 2);
  nilpotent(0, 1) = 1.0;
  CHECK_THROWS_AS(solve_lyapunov(nilpotent, Matrix<double>::Identity(2, 2)),
                  SingularLyapunov);

  CHECK_THROWS_AS(solve_lyapunov(A, Matrix<double>::Zero(2, 2)), std::invalid_argument);
}

TEST_CASE("dense lyapunov path: residual, symmetry, quadrature agreement") {
  const auto sys = random_dense_system(6, 2, 0.8, 11);
  const Matrix<double> Mc = terminal_cross_matrix(sys);
  const Matrix<double> G = solve_lyapunov(sys.A, Mc);

  CHECK((sys.A * G + G * sys.A.transpose() - Mc).norm() < 1e-10 * Mc.norm());
  CHECK((G - G.transpose()).norm() < 1e-12 * G.norm());

  const Matrix<double> Gq = gram_quadrature_oracle(sys, 256);
  CHECK((G - Gq).norm() < 1e-8 * Gq.norm());
}

TEST_CASE("diagonal heat gram matches closed form and quadrature") {
  const auto sys = paper_2d_system();
  const auto gram = build_gram(sys);

  CHECK((gram.G - diag_gram_closed_form(sys)).norm() < 1e-12 * gram.G.norm());
  const Matrix<double> Gq = gram_quadrature_oracle(sys, 256);
  CHECK((gram.G - Gq).norm() < 1e-8 * Gq.norm());

  // Modes with an even index in either axis see nothing from the centered
  // symmetric actuator, so their Gram rows vanish identically.
  for (int q = 0; q < sys.size(); ++q) {
    const bool even =
        sys.basis.index_set(q, 0) % 2 == 0 || sys.basis.index_set(q, 1) % 2 == 0;
    if (even) CHECK(gram.G.row(q).norm() < 1e-14);
  }
}

TEST_CASE("gram invariants on the 2D fixture") {
  const auto sys = paper_2d_system();
  const auto gram = build_gram(sys);

  CHECK((gram.G - gram.G.transpose()).norm() <= 1e-12 * gram.G.norm());
  const Eigen::SelfAdjointEigenSolver<Matrix<double>> es(gram.G);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10 * es.eigenvalues().maxCoeff());
  CHECK((sys.A * gram.G + gram.G * sys.A.transpose() - gram.M_check).norm() <
        1e-10 * gram.M_check.norm());
  CHECK(gram.delta_S == 1e-3);
  CHECK((gram.exp_AtF - matrix_exponential(sys.A, sys.t_F)).norm() == 0.0);

  CHECK_THROWS_AS(build_gram(sys, -1.0), std::invalid_argument);
}

TEST_CASE("variable-coefficient generator goes through the dense path intact") {
  const auto basis = build_basis(BoxDomain<double>{{1.0}}, 6);
  General1DCoefficients<double> g{constant_field(1.0), constant_field(0.3),
                                  constant_field(0.1)};
  const auto sys = build_system<double>(
      g, basis, {indicator_box(basis.domain, {0.25}, {0.75})}, 1.0,
      Vector<double>::Zero(basis.size()));
  CHECK_FALSE(sys.A_diagonal);

  const auto gram = build_gram(sys);
  CHECK((sys.A * gram.G + gram.G * sys.A.transpose() - gram.M_check).norm() <
        1e-10 * gram.M_check.norm());
  const Matrix<double> Gq = gram_quadrature_oracle(sys, 256);
  CHECK((gram.G - Gq).norm() < 1e-8 * Gq.norm());
  const Eigen::SelfAdjointEigenSolver<Matrix<double>> es(gram.G);
  CHECK(es.eigenvalues().minCoeff() >= -1e-10 * es.eigenvalues().maxCoeff());
}

TEST_CASE("quadratic form in G equals the control energy of the kernel law") {
  const auto sys = paper_2d_system();
  const auto gram = build_gram(sys);

  std::mt19937 rng(23);
  std::normal_distribution<double> dist;
  Vector<double> alpha(sys.size());
  for (int i = 0; i < sys.size(); ++i) alpha[i] = dist(rng);

  const auto rule = gauss_legendre<double>(16);
  double energy = 0.0;
  const int panels = 64;
  const double h = sys.t_F / panels;
  for (int p = 0; p < panels; ++p)
    for (Eigen::Index q = 0; q < rule.nodes.size(); ++q) {
      const double tau = (p + (rule.nodes[q] + 1.0) / 2.0) * h;
      energy += (h / 2.0) * rule.weights[q] *
                (input_response_F(sys, tau) * alpha).squaredNorm();
    }
  const double quad_form = alpha.dot(gram.G * alpha);
  CHECK(quad_form == doctest::Approx(energy).epsilon(1e-8));
}

TEST_CASE("quadrature oracle: scalar value, zero horizon, node guard") {
  const auto scalar = scalar_system(-1.0, 1.0, 1.0);
  CHECK(gram_quadrature_oracle(scalar, 64)(0, 0) ==
        doctest::Approx((1.0 - std::exp(-2.0)) / 2.0).epsilon(1e-12));

  auto frozen = scalar_system(-1.0, 1.0, 1.0);
  frozen.t_F = 0.0;
  CHECK(gram_quadrature_oracle(frozen, 64).norm() == 0.0);

  CHECK_THROWS_AS(gram_quadrature_oracle(scalar, 16), std::invalid_argument);
}
