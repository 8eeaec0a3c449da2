#pragma once

// Input-response kernel F_K(tau) = M^T exp(A^T (t_F - tau)) and its Gram
// matrix over the horizon, obtained without time quadrature by solving the
// Lyapunov equation A G + G A^T = M_check. A composite Gauss-Legendre oracle
// of the defining integral is provided for tests.

#include <fscontrol/galerkin_system.hpp>

#include <unsupported/Eigen/KroneckerProduct>

namespace fsc {

struct SingularLyapunov : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <class Scalar>
struct GramOperator {
  Matrix<Scalar> G;        // int_0^{t_F} F^T(tau) F(tau) dtau, symmetric PSD
  Matrix<Scalar> M_check;  // exp(A t_F) M (exp(A t_F) M)^T - M M^T
  Matrix<Scalar> exp_AtF;
  Scalar delta_S = Scalar(1e-3);  // spectral shift used by downstream inverses
};

template <class Scalar>
Matrix<Scalar> input_response_F(const GalerkinSystem<Scalar>& sys, Scalar tau) {
  if (!(tau >= Scalar(0)) || !(tau <= sys.t_F))
    throw std::invalid_argument("input_response_F: tau outside [0, t_F]");
  const Matrix<Scalar> At = sys.A.transpose();
  return sys.M_beta.transpose() * matrix_exponential(At, sys.t_F - tau);
}

template <class Scalar>
Matrix<Scalar> terminal_cross_matrix(const GalerkinSystem<Scalar>& sys) {
  const Matrix<Scalar> EM = matrix_exponential(sys.A, sys.t_F) * sys.M_beta;
  return EM * EM.transpose() - sys.M_beta * sys.M_beta.transpose();
}

// Diagonal generators divide entry by entry; anything else goes through the
// n^2 x n^2 Kronecker system (I (+) A) vec(G) = vec(M_check). O(n^6), which is
// fine at spectral truncation sizes.
template <class Scalar>
Matrix<Scalar> solve_lyapunov(const Matrix<Scalar>& A,
                              const std::type_identity_t<Matrix<Scalar>>& M_check) {
  const Eigen::Index n = A.rows();
  if (A.cols() != n || M_check.rows() != n || M_check.cols() != n)
    throw std::invalid_argument("solve_lyapunov: dimension mismatch");

  if (detail::is_diagonal(A)) {
    Matrix<Scalar> G(n, n);
    for (Eigen::Index k = 0; k < n; ++k)
      for (Eigen::Index l = 0; l < n; ++l) {
        const Scalar denom = A(k, k) + A(l, l);
        if (denom == Scalar(0))
          throw SingularLyapunov("solve_lyapunov: A_kk + A_ll vanishes");
        G(k, l) = M_check(k, l) / denom;
      }
    return G;
  }

  const Matrix<Scalar> I = Matrix<Scalar>::Identity(n, n);
  const Matrix<Scalar> S =
      Eigen::kroneckerProduct(I, A).eval() + Eigen::kroneckerProduct(A, I).eval();
  const Eigen::FullPivLU<Matrix<Scalar>> lu(S);
  if (!lu.isInvertible())
    throw SingularLyapunov("solve_lyapunov: Kronecker system is rank-deficient");
  const Vector<Scalar> vecM =
      Eigen::Map<const Vector<Scalar>>(M_check.data(), n * n);
  const Vector<Scalar> vecG = lu.solve(vecM);
  Matrix<Scalar> G = Eigen::Map<const Matrix<Scalar>>(vecG.data(), n, n);
  return ((G + G.transpose()) / Scalar(2)).eval();
}

// Direct evaluation of the defining integral; test-side reference only.
template <class Scalar>
Matrix<Scalar> gram_quadrature_oracle(const GalerkinSystem<Scalar>& sys, int n_nodes) {
  if (n_nodes < 32)
    throw std::invalid_argument("gram_quadrature_oracle: need at least 32 nodes");
  const int order = 16;
  const int panels = (n_nodes + order - 1) / order;
  const GaussRule<Scalar> rule = gauss_legendre<Scalar>(order);
  const int n = sys.size();
  Matrix<Scalar> G = Matrix<Scalar>::Zero(n, n);
  const Scalar h = sys.t_F / Scalar(panels);
  for (int p = 0; p < panels; ++p)
    for (Eigen::Index q = 0; q < rule.nodes.size(); ++q) {
      const Scalar tau = (Scalar(p) + (rule.nodes[q] + Scalar(1)) / Scalar(2)) * h;
      const Matrix<Scalar> F = input_response_F(sys, tau);
      G += (h / Scalar(2)) * rule.weights[q] * F.transpose() * F;
    }
  return G;
}

template <class Scalar>
GramOperator<Scalar> build_gram(const GalerkinSystem<Scalar>& sys,
                                Scalar delta_S = Scalar(1e-3)) {
  if (!(delta_S > Scalar(0)))
    throw std::invalid_argument("build_gram: shift must be positive");
  GramOperator<Scalar> op;
  op.M_check = terminal_cross_matrix(sys);
  op.G = solve_lyapunov(sys.A, op.M_check);
  op.exp_AtF = matrix_exponential(sys.A, sys.t_F);
  op.delta_S = delta_S;
  return op;
}

}  // namespace fsc
