#include "korn/special.hpp"

#include <cmath>
#include <vector>

#include "korn/common.hpp"

namespace korn::special {

double sphere_surface_measure(int n) {
  require(n >= 0, "sphere_surface_measure: n must be >= 0");
  return 2.0 * std::pow(M_PI, 0.5 * (n + 1)) / std::tgamma(0.5 * (n + 1));
}

double one_minus_cos_moment(double b) {
  require(b > 0.0 && b < 2.0, "one_minus_cos_moment: b must lie in (0,2)");
  return M_PI / (2.0 * b * std::tgamma(b) * std::sin(0.5 * M_PI * b));
}

double sine_square_moment(double s) {
  require(s > 0.0 && s < 1.0, "sine_square_moment: s must lie in (0,1)");
  return 0.5 * std::pow(2.0 * M_PI, 2.0 * s) * one_minus_cos_moment(2.0 * s);
}

void gauss_legendre(int n, double a, double b, double* nodes, double* weights) {
  require(n >= 1, "gauss_legendre: n must be >= 1");
  // Newton iteration on the Legendre polynomial, standard symmetric layout.
  const int m = (n + 1) / 2;
  const double xm = 0.5 * (b + a);
  const double xl = 0.5 * (b - a);
  for (int i = 0; i < m; ++i) {
    double z = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    double pp = 0.0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1.0, p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j + 1.0) * z * p2 - j * p3) / (j + 1.0);
      }
      pp = n * (z * p1 - p2) / (z * z - 1.0);
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) < 1e-15) break;
    }
    nodes[i] = xm - xl * z;
    nodes[n - 1 - i] = xm + xl * z;
    weights[i] = 2.0 * xl / ((1.0 - z * z) * pp * pp);
    weights[n - 1 - i] = weights[i];
  }
}

namespace {

// Tanh-sinh quadrature over the open unit interval. For fractional q the
// integrands below have algebraic endpoint singularities in their
// derivatives, which stalls Gauss-Legendre near 1e-9; the double-exponential
// node clustering restores full precision. The integrand receives both sigma
// and 1 - sigma, each computed without cancellation, so it can resolve
// behaviour near either endpoint.
template <typename F>
double tanh_sinh_unit(F&& f) {
  const double h = 1.0 / 32.0;
  const int kmax = static_cast<int>(4.5 / h);
  // Center node t = 0: sigma = 1/2, weight (pi/4) * h.
  double sum = 0.25 * M_PI * h * f(0.5, 0.5);
  for (int k = 1; k <= kmax; ++k) {
    const double t = k * h;
    const double y = 0.5 * M_PI * std::sinh(t);
    const double ey = std::exp(-2.0 * y);
    const double lo = ey / (1.0 + ey);        // 1 - sigma at the +t node
    const double hi = 1.0 / (1.0 + ey);       // sigma at the +t node
    const double w =
        h * 0.25 * M_PI * std::cosh(t) * 4.0 * ey / ((1.0 + ey) * (1.0 + ey));
    if (w < 1e-40) break;
    sum += w * (f(hi, lo) + f(lo, hi));
  }
  return sum;
}

struct AxisMoments {
  double s0;  // int_{S^{d-1}} |e.w|^q
  double s2;  // int_{S^{d-1}} |e.w|^{q+2}
};

AxisMoments axis_moments(int d, double q) {
  require(d >= 1 && d <= 3, "axis_moments: d must be 1, 2, or 3");
  require(q > -1.0, "axis_moments: q must exceed -1");
  if (d == 1) return {2.0, 2.0};
  AxisMoments out{0.0, 0.0};
  if (d == 2) {
    // 4 int_0^{pi/2} cos(theta)^q dtheta with theta = (pi/2) sigma; the
    // cosine is evaluated as sin of the distance to the far endpoint.
    out.s0 = 2.0 * M_PI * tanh_sinh_unit([q](double, double om) {
               return std::pow(std::sin(0.5 * M_PI * om), q);
             });
    out.s2 = 2.0 * M_PI * tanh_sinh_unit([q](double, double om) {
               return std::pow(std::sin(0.5 * M_PI * om), q + 2.0);
             });
  } else {
    // d=3, measure sin(phi) dphi dtheta; substitute u = cos(phi).
    out.s0 = 4.0 * M_PI *
             tanh_sinh_unit([q](double u, double) { return std::pow(u, q); });
    out.s2 = 4.0 * M_PI * tanh_sinh_unit([q](double u, double) {
               return std::pow(u, q + 2.0);
             });
  }
  return out;
}

}  // namespace

double sphere_axis_moment(int d, double q) { return axis_moments(d, q).s0; }

SphereMomentPair sphere_tensor_moment(int d, double q) {
  const AxisMoments m = axis_moments(d, q);
  if (d == 1) return {0.0, m.s0};
  const double alpha = (m.s0 - m.s2) / (d - 1);
  return {alpha, m.s2 - alpha};
}

ProjectedMultiplierConstants projected_multiplier_constants(int d, double s) {
  const double i2s = one_minus_cos_moment(2.0 * s);
  const SphereMomentPair t = sphere_tensor_moment(d, 2.0 * s);
  const double q = 2.0 * i2s * sphere_axis_moment(d, 2.0 * s);
  return {2.0 * i2s * t.alpha, 2.0 * i2s * t.beta, q};
}

double fractional_laplacian_kappa(int d, double beta) {
  require(beta > 0.0 && beta < 1.0, "fractional_laplacian_kappa: beta in (0,1)");
  return one_minus_cos_moment(2.0 * beta) * sphere_axis_moment(d, 2.0 * beta);
}

double smoothstep01(double u) {
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 1.0;
  return u * u * u * (10.0 + u * (-15.0 + 6.0 * u));
}

double radial_window(double r, double r0, double r1) {
  require(r1 > r0 && r0 >= 0.0, "radial_window: need 0 <= r0 < r1");
  if (r <= r0) return 1.0;
  if (r >= r1) return 0.0;
  return smoothstep01((r1 - r) / (r1 - r0));
}

}  // namespace korn::special
