#pragma once

#include <cstddef>

// Closed forms and quadratures shared by the kernel and seminorm modules.

namespace korn::special {

// Surface measure of the unit n-sphere S^n embedded in R^{n+1},
// |S^n| = 2 pi^{(n+1)/2} / Gamma((n+1)/2). |S^0| = 2, |S^1| = 2 pi,
// |S^2| = 4 pi.
double sphere_surface_measure(int n);

// int_0^inf (1 - cos u) u^{-1-b} du = pi / (2 b Gamma(b) sin(pi b / 2)),
// valid for b in (0, 2). Smooth through b = 1.
double one_minus_cos_moment(double b);

// int_0^inf sin(pi r)^2 r^{-1-2s} dr = (2 pi)^{2s} one_minus_cos_moment(2s) / 2.
double sine_square_moment(double s);

// S0(d, q) = int_{S^{d-1}} |e . w|^q dsigma(w) for any unit vector e,
// evaluated by one-dimensional Gauss-Legendre quadrature in the polar angle.
double sphere_axis_moment(int d, double q);

// Decomposition int_{S^{d-1}} |e . w|^q w w^T dsigma = alpha I + beta e e^T.
struct SphereMomentPair {
  double alpha;
  double beta;
};
SphereMomentPair sphere_tensor_moment(int d, double q);

// Constants of the p=2 Fourier multipliers. The projected-difference
// quadratic form has multiplier (2 pi |xi|)^{2s} (l1 I + l2 xihat xihat^T);
// the full-difference form has (2 pi |xi|)^{2s} q. They satisfy
// d*l1 + l2 = q.
struct ProjectedMultiplierConstants {
  double l1;
  double l2;
  double q;
};
ProjectedMultiplierConstants projected_multiplier_constants(int d, double s);

// Constant kappa(d, beta) relating the fractional Laplacian with multiplier
// (2 pi |xi|)^{2 beta} to its singular-integral form
// (1/kappa) P.V. int (u(x) - u(y)) |x - y|^{-d-2 beta} dy.
double fractional_laplacian_kappa(int d, double beta);

// Quintic smoothstep rising from 0 at u=0 to 1 at u=1, C^2 at both ends.
double smoothstep01(double u);

// Radial cutoff equal to 1 for r <= r0, 0 for r >= r1, smooth in between.
double radial_window(double r, double r0, double r1);

// Nodes and weights of an n-point Gauss-Legendre rule on [a, b].
void gauss_legendre(int n, double a, double b, double* nodes, double* weights);

}  // namespace korn::special
