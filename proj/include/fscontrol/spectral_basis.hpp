#pragma once

// Tensor-product sine eigenbasis of the Dirichlet Laplacian on a box, with
// composite Gauss-Legendre quadrature, field projection, and coefficient-space
// norms. Everything downstream (Galerkin truncation, Gramians, control laws)
// works in the coefficient space spanned by this basis.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsc {

template <class Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <class Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// Coefficient vectors are plain Eigen vectors: entry q is the coefficient of
// basis mode q, so the Euclidean norm equals the L2(Omega) norm (Parseval).
template <class Scalar>
using CoeffVector = Vector<Scalar>;

template <class Scalar>
struct BoxDomain {
  std::vector<Scalar> lengths;  // (L_x) in 1D, (L_x, L_y) in 2D

  int dim() const { return static_cast<int>(lengths.size()); }
};

// A scalar function on the closure of the box. Points are passed as a fixed
// pair; 1D fields ignore the second entry. Breakpoints list interior locations
// per axis where the value or a derivative jumps, so quadrature panels can be
// aligned with them.
template <class Scalar>
struct ScalarField {
  std::function<Scalar(const std::array<Scalar, 2>&)> eval;
  std::array<std::vector<Scalar>, 2> breakpoints{};
};

template <class Scalar>
struct SpectralBasis {
  BoxDomain<Scalar> domain;
  int per_axis_order = 0;  // K_a
  // Row q holds the per-axis mode numbers (1-based); n_K = K_a^dim rows.
  // 2D rows are ordered k(i,j) = (i-1)*K_a + j.
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic> index_set;
  // Sum over axes of (k_i*pi/L_i)^2, stored positive; the generator applies
  // the diffusivity scale and the sign.
  Vector<Scalar> eigenvalue_magnitudes;

  int size() const { return static_cast<int>(index_set.rows()); }
};

namespace detail {

inline void check_domain(int dim, const char* who) {
  if (dim != 1 && dim != 2)
    throw std::invalid_argument(std::string(who) + ": domain dimension must be 1 or 2");
}

template <class Scalar>
void check_lengths(const BoxDomain<Scalar>& dom, const char* who) {
  check_domain(dom.dim(), who);
  for (Scalar L : dom.lengths)
    if (!(L > Scalar(0)))
      throw std::invalid_argument(std::string(who) + ": box lengths must be positive");
}

}  // namespace detail

template <class Scalar>
SpectralBasis<Scalar> build_basis(const BoxDomain<Scalar>& domain, int per_axis_order) {
  detail::check_lengths(domain, "build_basis");
  if (per_axis_order < 1)
    throw std::invalid_argument("build_basis: per-axis order must be at least 1");

  SpectralBasis<Scalar> basis;
  basis.domain = domain;
  basis.per_axis_order = per_axis_order;

  const int q = domain.dim();
  const int Ka = per_axis_order;
  const int n = (q == 1) ? Ka : Ka * Ka;
  basis.index_set.resize(n, q);
  basis.eigenvalue_magnitudes.resize(n);

  const Scalar pi = Scalar(EIGEN_PI);
  if (q == 1) {
    for (int k = 1; k <= Ka; ++k) {
      basis.index_set(k - 1, 0) = k;
      const Scalar w = Scalar(k) * pi / domain.lengths[0];
      basis.eigenvalue_magnitudes[k - 1] = w * w;
    }
  } else {
    for (int i = 1; i <= Ka; ++i)
      for (int j = 1; j <= Ka; ++j) {
        const int row = (i - 1) * Ka + (j - 1);
        basis.index_set(row, 0) = i;
        basis.index_set(row, 1) = j;
        const Scalar wx = Scalar(i) * pi / domain.lengths[0];
        const Scalar wy = Scalar(j) * pi / domain.lengths[1];
        basis.eigenvalue_magnitudes[row] = wx * wx + wy * wy;
      }
  }
  return basis;
}

template <class Scalar>
Scalar eval_mode(const SpectralBasis<Scalar>& basis, int index,
                 const std::array<Scalar, 2>& x) {
  if (index < 0 || index >= basis.size())
    throw std::invalid_argument("eval_mode: mode index out of range");
  const Scalar pi = Scalar(EIGEN_PI);
  Scalar value = Scalar(1);
  for (int axis = 0; axis < basis.domain.dim(); ++axis) {
    const Scalar L = basis.domain.lengths[axis];
    const int k = basis.index_set(index, axis);
    value *= std::sqrt(Scalar(2) / L) * std::sin(Scalar(k) * pi * x[axis] / L);
  }
  return value;
}

// Partial derivative of a mode along one axis; used by the variable-coefficient
// 1D assembly, where the bilinear form needs phi' against phi'.
template <class Scalar>
Scalar eval_mode_deriv(const SpectralBasis<Scalar>& basis, int index,
                       const std::array<Scalar, 2>& x, int axis) {
  if (index < 0 || index >= basis.size())
    throw std::invalid_argument("eval_mode_deriv: mode index out of range");
  if (axis < 0 || axis >= basis.domain.dim())
    throw std::invalid_argument("eval_mode_deriv: axis out of range");
  const Scalar pi = Scalar(EIGEN_PI);
  Scalar value = Scalar(1);
  for (int a = 0; a < basis.domain.dim(); ++a) {
    const Scalar L = basis.domain.lengths[a];
    const int k = basis.index_set(index, a);
    const Scalar w = Scalar(k) * pi / L;
    const Scalar amp = std::sqrt(Scalar(2) / L);
    value *= (a == axis) ? amp * w * std::cos(w * x[a]) : amp * std::sin(w * x[a]);
  }
  return value;
}

// Gauss-Legendre rule on [-1, 1], nodes by Newton iteration on P_n.
template <class Scalar>
struct GaussRule {
  Vector<Scalar> nodes;
  Vector<Scalar> weights;
};

template <class Scalar = double>
GaussRule<Scalar> gauss_legendre(int order) {
  if (order < 1) throw std::invalid_argument("gauss_legendre: order must be at least 1");
  GaussRule<Scalar> rule;
  rule.nodes.resize(order);
  rule.weights.resize(order);
  const Scalar pi = Scalar(EIGEN_PI);
  for (int i = 0; i < (order + 1) / 2; ++i) {
    Scalar x = std::cos(pi * (Scalar(i) + Scalar(0.75)) / (Scalar(order) + Scalar(0.5)));
    Scalar dp = Scalar(0);
    for (int it = 0; it < 100; ++it) {
      Scalar p0 = Scalar(1), p1 = x;
      for (int k = 2; k <= order; ++k) {
        const Scalar pk =
            ((Scalar(2 * k - 1) * x * p1) - Scalar(k - 1) * p0) / Scalar(k);
        p0 = p1;
        p1 = pk;
      }
      // Derivative via the standard identity; order == 1 reduces to P_1' = 1.
      dp = (order == 1) ? Scalar(1)
                        : Scalar(order) * (x * p1 - p0) / (x * x - Scalar(1));
      const Scalar dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < Scalar(1e-15)) break;
    }
    rule.nodes[i] = -x;
    rule.nodes[order - 1 - i] = x;
    const Scalar w = Scalar(2) / ((Scalar(1) - x * x) * dp * dp);
    rule.weights[i] = w;
    rule.weights[order - 1 - i] = w;
  }
  return rule;
}

namespace detail {

// Uniform panel edges on [0, L] merged with the field's breakpoints for one
// axis. Degenerate (zero-width) panels are dropped by the epsilon dedupe.
template <class Scalar>
std::vector<Scalar> panel_edges(Scalar L, int panels, const std::vector<Scalar>& breaks) {
  std::vector<Scalar> edges;
  edges.reserve(panels + breaks.size() + 1);
  for (int p = 0; p <= panels; ++p) edges.push_back(L * Scalar(p) / Scalar(panels));
  for (Scalar b : breaks)
    if (b > Scalar(0) && b < L) edges.push_back(b);
  std::sort(edges.begin(), edges.end());
  const Scalar eps = L * Scalar(1e-14);
  std::vector<Scalar> out;
  for (Scalar e : edges)
    if (out.empty() || e - out.back() > eps) out.push_back(e);
  out.back() = L;
  return out;
}

// Flattened quadrature grid for one axis: all panel-mapped nodes and weights.
template <class Scalar>
void axis_grid(Scalar L, int panels, const std::vector<Scalar>& breaks,
               const GaussRule<Scalar>& rule, std::vector<Scalar>& nodes,
               std::vector<Scalar>& weights) {
  const std::vector<Scalar> edges = panel_edges(L, panels, breaks);
  nodes.clear();
  weights.clear();
  for (std::size_t p = 0; p + 1 < edges.size(); ++p) {
    const Scalar a = edges[p], b = edges[p + 1];
    const Scalar half = (b - a) / Scalar(2), mid = (a + b) / Scalar(2);
    for (int i = 0; i < rule.nodes.size(); ++i) {
      nodes.push_back(mid + half * rule.nodes[i]);
      weights.push_back(half * rule.weights[i]);
    }
  }
}

}  // namespace detail

inline constexpr int kDefaultGaussOrder = 12;

// Composite Gauss-Legendre integral of a field over the box. Panels are always
// split at the declared breakpoints, so piecewise-smooth integrands are smooth
// on every panel.
template <class Scalar>
Scalar integrate(const ScalarField<Scalar>& field, const BoxDomain<Scalar>& domain,
                 int panels_per_axis, int gauss_order = kDefaultGaussOrder) {
  detail::check_lengths(domain, "integrate");
  if (panels_per_axis < 1)
    throw std::invalid_argument("integrate: panels_per_axis must be at least 1");
  const GaussRule<Scalar> rule = gauss_legendre<Scalar>(gauss_order);

  std::vector<Scalar> xn, xw;
  detail::axis_grid(domain.lengths[0], panels_per_axis, field.breakpoints[0], rule, xn, xw);
  if (domain.dim() == 1) {
    Scalar sum = Scalar(0);
    for (std::size_t i = 0; i < xn.size(); ++i)
      sum += xw[i] * field.eval({xn[i], Scalar(0)});
    return sum;
  }

  std::vector<Scalar> yn, yw;
  detail::axis_grid(domain.lengths[1], panels_per_axis, field.breakpoints[1], rule, yn, yw);
  Scalar sum = Scalar(0);
  for (std::size_t i = 0; i < xn.size(); ++i) {
    Scalar row = Scalar(0);
    for (std::size_t j = 0; j < yn.size(); ++j)
      row += yw[j] * field.eval({xn[i], yn[j]});
    sum += xw[i] * row;
  }
  return sum;
}

// Coefficients <field, phi_q> for every basis mode. Panels are chosen to
// resolve the fastest mode oscillation as well as the field breakpoints.
template <class Scalar>
CoeffVector<Scalar> project_field(const ScalarField<Scalar>& field,
                                  const SpectralBasis<Scalar>& basis,
                                  int panels_per_axis = -1,
                                  int gauss_order = kDefaultGaussOrder) {
  const int panels =
      panels_per_axis > 0 ? panels_per_axis : std::max(basis.per_axis_order, 8);
  const GaussRule<Scalar> rule = gauss_legendre<Scalar>(gauss_order);

  const int dim = basis.domain.dim();
  std::array<std::vector<Scalar>, 2> nodes, weights;
  for (int a = 0; a < dim; ++a)
    detail::axis_grid(basis.domain.lengths[a], panels, field.breakpoints[a], rule,
                      nodes[a], weights[a]);

  const int n = basis.size();
  CoeffVector<Scalar> coeffs = CoeffVector<Scalar>::Zero(n);

  // Precompute per-axis mode values at the quadrature nodes; the projection is
  // then a weighted sum of separable products.
  const Scalar pi = Scalar(EIGEN_PI);
  std::array<Matrix<Scalar>, 2> mode_vals;  // [axis](k-1, node)
  for (int a = 0; a < dim; ++a) {
    const Scalar L = basis.domain.lengths[a];
    const Scalar amp = std::sqrt(Scalar(2) / L);
    mode_vals[a].resize(basis.per_axis_order, static_cast<Eigen::Index>(nodes[a].size()));
    for (int k = 1; k <= basis.per_axis_order; ++k)
      for (std::size_t i = 0; i < nodes[a].size(); ++i)
        mode_vals[a](k - 1, static_cast<Eigen::Index>(i)) =
            amp * std::sin(Scalar(k) * pi * nodes[a][i] / L);
  }

  if (dim == 1) {
    for (std::size_t i = 0; i < nodes[0].size(); ++i) {
      const Scalar fw = weights[0][i] * field.eval({nodes[0][i], Scalar(0)});
      for (int q = 0; q < n; ++q)
        coeffs[q] += fw * mode_vals[0](basis.index_set(q, 0) - 1,
                                       static_cast<Eigen::Index>(i));
    }
  } else {
    for (std::size_t i = 0; i < nodes[0].size(); ++i)
      for (std::size_t j = 0; j < nodes[1].size(); ++j) {
        const Scalar fw =
            weights[0][i] * weights[1][j] * field.eval({nodes[0][i], nodes[1][j]});
        if (fw == Scalar(0)) continue;
        for (int q = 0; q < n; ++q)
          coeffs[q] += fw *
                       mode_vals[0](basis.index_set(q, 0) - 1,
                                    static_cast<Eigen::Index>(i)) *
                       mode_vals[1](basis.index_set(q, 1) - 1,
                                    static_cast<Eigen::Index>(j));
      }
  }
  return coeffs;
}

template <class Derived>
typename Derived::Scalar coeff_norm(const Eigen::MatrixBase<Derived>& c) {
  return c.norm();
}

// Pointwise reconstruction of an expansion sum c_q * phi_q.
template <class Scalar>
Scalar eval_expansion(const SpectralBasis<Scalar>& basis, const CoeffVector<Scalar>& c,
                      const std::array<Scalar, 2>& x) {
  if (c.size() != basis.size())
    throw std::invalid_argument("eval_expansion: coefficient count does not match basis");
  Scalar value = Scalar(0);
  for (int q = 0; q < basis.size(); ++q) value += c[q] * eval_mode(basis, q, x);
  return value;
}

// ---- Built-in fields -------------------------------------------------------
//
// Fields are named built-ins rather than arbitrary code so configs can
// describe them; each declares its own breakpoints.

template <class Scalar>
ScalarField<Scalar> constant_field(Scalar value) {
  ScalarField<Scalar> f;
  f.eval = [value](const std::array<Scalar, 2>&) { return value; };
  return f;
}

// Indicator of an axis-aligned box; lo/hi need dim() entries.
template <class Scalar>
ScalarField<Scalar> indicator_box(const BoxDomain<Scalar>& domain,
                                  const std::vector<Scalar>& lo,
                                  const std::vector<Scalar>& hi) {
  detail::check_lengths(domain, "indicator_box");
  const int dim = domain.dim();
  if (static_cast<int>(lo.size()) != dim || static_cast<int>(hi.size()) != dim)
    throw std::invalid_argument("indicator_box: bounds must have one entry per axis");
  for (int a = 0; a < dim; ++a)
    if (!(lo[a] < hi[a]))
      throw std::invalid_argument("indicator_box: each lower bound must be below the upper");
  ScalarField<Scalar> f;
  f.eval = [lo, hi, dim](const std::array<Scalar, 2>& x) {
    for (int a = 0; a < dim; ++a)
      if (x[a] < lo[a] || x[a] > hi[a]) return Scalar(0);
    return Scalar(1);
  };
  for (int a = 0; a < dim; ++a) f.breakpoints[a] = {lo[a], hi[a]};
  return f;
}

// Frustum-of-a-pyramid target: zero on the boundary, a flat plateau of the
// given height on the inner box, linear ramps of width ramp_fraction*L_i in
// between (min-of-ramps form). The ramp edges are the axis breakpoints; the
// diagonal kinks inside the ramp band are not axis-alignable, so projections
// of this field converge a little slower than for tensor-product fields.
template <class Scalar>
ScalarField<Scalar> frustum_field(const BoxDomain<Scalar>& domain, Scalar height,
                                  Scalar ramp_fraction = Scalar(0.1)) {
  detail::check_lengths(domain, "frustum_field");
  if (!(ramp_fraction > Scalar(0)) || !(ramp_fraction < Scalar(0.5)))
    throw std::invalid_argument("frustum_field: ramp_fraction must lie in (0, 0.5)");
  const int dim = domain.dim();
  const std::vector<Scalar> L = domain.lengths;
  ScalarField<Scalar> f;
  f.eval = [L, dim, height, ramp_fraction](const std::array<Scalar, 2>& x) {
    Scalar r = Scalar(1);
    for (int a = 0; a < dim; ++a) {
      const Scalar w = ramp_fraction * L[a];
      r = std::min(r, std::min(x[a], L[a] - x[a]) / w);
    }
    return height * std::max(std::min(r, Scalar(1)), Scalar(0));
  };
  for (int a = 0; a < dim; ++a) {
    const Scalar w = ramp_fraction * L[a];
    f.breakpoints[a] = {w, L[a] - w};
  }
  return f;
}

// Product form of the same target (independent trapezoid per axis); kept as an
// alternative reading of the frustum shape.
template <class Scalar>
ScalarField<Scalar> frustum_field_product(const BoxDomain<Scalar>& domain, Scalar height,
                                          Scalar ramp_fraction = Scalar(0.1)) {
  detail::check_lengths(domain, "frustum_field_product");
  const int dim = domain.dim();
  const std::vector<Scalar> L = domain.lengths;
  ScalarField<Scalar> f;
  f.eval = [L, dim, height, ramp_fraction](const std::array<Scalar, 2>& x) {
    Scalar v = height;
    for (int a = 0; a < dim; ++a) {
      const Scalar w = ramp_fraction * L[a];
      const Scalar r = std::min(x[a], L[a] - x[a]) / w;
      v *= std::max(std::min(r, Scalar(1)), Scalar(0));
    }
    return v;
  };
  for (int a = 0; a < dim; ++a) {
    const Scalar w = ramp_fraction * L[a];
    f.breakpoints[a] = {w, L[a] - w};
  }
  return f;
}

// The basis mode with the given per-axis numbers, as a field (handy fixture:
// its projection is a unit coordinate vector).
template <class Scalar>
ScalarField<Scalar> sine_mode_field(const BoxDomain<Scalar>& domain,
                                    const std::vector<int>& mode) {
  detail::check_lengths(domain, "sine_mode_field");
  const int dim = domain.dim();
  if (static_cast<int>(mode.size()) != dim)
    throw std::invalid_argument("sine_mode_field: one mode number per axis required");
  for (int k : mode)
    if (k < 1) throw std::invalid_argument("sine_mode_field: mode numbers are 1-based");
  const std::vector<Scalar> L = domain.lengths;
  ScalarField<Scalar> f;
  f.eval = [L, dim, mode](const std::array<Scalar, 2>& x) {
    const Scalar pi = Scalar(EIGEN_PI);
    Scalar v = Scalar(1);
    for (int a = 0; a < dim; ++a)
      v *= std::sqrt(Scalar(2) / L[a]) * std::sin(Scalar(mode[a]) * pi * x[a] / L[a]);
    return v;
  };
  return f;
}

// Pointwise linear combination a*f + b*g; breakpoints are merged.
template <class Scalar>
ScalarField<Scalar> field_sum(Scalar a, const ScalarField<Scalar>& f, Scalar b,
                              const ScalarField<Scalar>& g) {
  ScalarField<Scalar> out;
  auto fe = f.eval, ge = g.eval;
  out.eval = [a, b, fe, ge](const std::array<Scalar, 2>& x) {
    return a * fe(x) + b * ge(x);
  };
  for (int axis = 0; axis < 2; ++axis) {
    out.breakpoints[axis] = f.breakpoints[axis];
    out.breakpoints[axis].insert(out.breakpoints[axis].end(),
                                 g.breakpoints[axis].begin(),
                                 g.breakpoints[axis].end());
    std::sort(out.breakpoints[axis].begin(), out.breakpoints[axis].end());
  }
  return out;
}

}  // namespace fsc
