#include "korn/kernels.hpp"

#include <cmath>

#include "korn/special.hpp"

namespace korn {

namespace {

double omega(int d) { return special::sphere_surface_measure(d); }

double norm2(int d, const double* x) {
  double r2 = 0.0;
  for (int i = 0; i < d; ++i) r2 += x[i] * x[i];
  return r2;
}

}  // namespace

double poisson_kernel(int d, const double* x, double t) {
  require(t > 0.0, "poisson_kernel: t must be positive");
  const double rho = norm2(d, x) + t * t;
  return (2.0 / omega(d)) * t * std::pow(rho, -0.5 * (d + 1));
}

double poisson_kernel_dt(int d, const double* x, double t) {
  require(t > 0.0, "poisson_kernel_dt: t must be positive");
  const double rho = norm2(d, x) + t * t;
  const double a = std::pow(rho, -0.5 * (d + 1));
  return (2.0 / omega(d)) * (a - (d + 1) * t * t * a / rho);
}

void poisson_type_kernel(int d, const double* x, double t, double* out) {
  require(t > 0.0, "poisson_type_kernel: t must be positive");
  const double rho = norm2(d, x) + t * t;
  const double coef =
      (2.0 * (d + 1) / omega(d)) * t * std::pow(rho, -0.5 * (d + 3));
  double v[4];
  for (int i = 0; i < d; ++i) v[i] = x[i];
  v[d] = t;
  for (int j = 0; j <= d; ++j)
    for (int k = 0; k <= d; ++k) out[j * (d + 1) + k] = coef * v[j] * v[k];
}

void poisson_type_kernel_dt(int d, const double* x, double t, double* out) {
  require(t > 0.0, "poisson_type_kernel_dt: t must be positive");
  const double rho = norm2(d, x) + t * t;
  const double a = std::pow(rho, -0.5 * (d + 3));
  const double coef = 2.0 * (d + 1) / omega(d);
  double v[4];
  for (int i = 0; i < d; ++i) v[i] = x[i];
  v[d] = t;
  const double shrink = (d + 3) * t * t / rho;
  for (int j = 0; j <= d; ++j) {
    for (int k = 0; k <= d; ++k) {
      double term = v[j] * v[k] * (1.0 - shrink);
      if (j == d) term += t * v[k];
      if (k == d) term += t * v[j];
      out[j * (d + 1) + k] = coef * a * term;
    }
  }
}

double poisson_symbol(int d, const double* xi, double t) {
  return std::exp(-2.0 * M_PI * t * std::sqrt(norm2(d, xi)));
}

double poisson_symbol_dt(int d, const double* xi, double t) {
  const double r = std::sqrt(norm2(d, xi));
  return -2.0 * M_PI * r * std::exp(-2.0 * M_PI * t * r);
}

void symbol_nilpotent_part(int d, const double* xi, std::complex<double>* out) {
  const double r2 = norm2(d, xi);
  require(r2 > 0.0, "symbol_nilpotent_part: xi must be nonzero");
  const double r = std::sqrt(r2);
  const int n = d + 1;
  for (int j = 0; j < d; ++j)
    for (int k = 0; k < d; ++k) out[j * n + k] = -xi[j] * xi[k] / r2;
  for (int j = 0; j < d; ++j) {
    const std::complex<double> e(0.0, -xi[j] / r);
    out[j * n + d] = e;
    out[d * n + j] = e;
  }
  out[d * n + d] = 1.0;
}

void poisson_type_symbol(int d, const double* xi, double t,
                         std::complex<double>* out) {
  const int n = d + 1;
  const double r = std::sqrt(norm2(d, xi));
  if (r == 0.0) {
    for (int i = 0; i < n * n; ++i) out[i] = 0.0;
    for (int i = 0; i < n; ++i) out[i * n + i] = 1.0;
    return;
  }
  std::complex<double> M[16];
  symbol_nilpotent_part(d, xi, M);
  const double e = std::exp(-2.0 * M_PI * r * t);
  const double a = 2.0 * M_PI * r * t;
  for (int i = 0; i < n * n; ++i) out[i] = e * a * M[i];
  for (int i = 0; i < n; ++i) out[i * n + i] += e;
}

void poisson_type_symbol_dt(int d, const double* xi, double t,
                            std::complex<double>* out) {
  const int n = d + 1;
  const double r = std::sqrt(norm2(d, xi));
  if (r == 0.0) {
    for (int i = 0; i < n * n; ++i) out[i] = 0.0;
    return;
  }
  std::complex<double> M[16];
  symbol_nilpotent_part(d, xi, M);
  const double w = 2.0 * M_PI * r;
  const double e = std::exp(-w * t);
  for (int i = 0; i < n * n; ++i) out[i] = w * e * (1.0 - w * t) * M[i];
  for (int i = 0; i < n; ++i) out[i * n + i] -= w * e;
}

namespace {

struct AxisEntry {
  double c;
  double w;
};

// The extended lattice of half-width A = (2 images + 1) L / 2 contains the
// origin and is symmetric except for the single unpaired row at -A; fold
// mirrored coordinates into weight-2 entries.
std::vector<AxisEntry> folded_axis(const GridSpec& g, int images) {
  require(images >= 1, "periodized sums need images >= 1");
  const double h = g.h();
  const long E = static_cast<long>(2 * images + 1) * g.N;
  std::vector<AxisEntry> ax;
  ax.reserve(E / 2 + 1);
  ax.push_back({0.0, 1.0});
  for (long k = 1; k < E / 2; ++k) ax.push_back({k * h, 2.0});
  ax.push_back({0.5 * (2 * images + 1) * g.L, 1.0});
  return ax;
}

}  // namespace

double periodized_scalar_mass(const GridSpec& g, double t, int images) {
  const std::vector<AxisEntry> ax = folded_axis(g, images);
  const double hd = std::pow(g.h(), g.d);
  const double coef = (2.0 / omega(g.d)) * t;
  const double t2 = t * t;
  const std::size_t na = ax.size();
  double acc[1];
  if (g.d == 1) {
    chunked_reduce(
        na, 1,
        [&](std::size_t b, std::size_t e, double* out) {
          double v = 0.0;
          for (std::size_t i = b; i < e; ++i) {
            const double rho = ax[i].c * ax[i].c + t2;
            v += ax[i].w / rho;
          }
          out[0] = v;
        },
        acc);
  } else if (g.d == 2) {
    chunked_reduce(
        na, 1,
        [&](std::size_t b, std::size_t e, double* out) {
          double v = 0.0;
          for (std::size_t i = b; i < e; ++i) {
            const double ci2 = ax[i].c * ax[i].c + t2;
            double row = 0.0;
            for (std::size_t j = 0; j < na; ++j) {
              const double rho = ci2 + ax[j].c * ax[j].c;
              row += ax[j].w / (rho * std::sqrt(rho));
            }
            v += ax[i].w * row;
          }
          out[0] = v;
        },
        acc);
  } else {
    chunked_reduce(
        na, 1,
        [&](std::size_t b, std::size_t e, double* out) {
          double v = 0.0;
          for (std::size_t i = b; i < e; ++i) {
            const double ci2 = ax[i].c * ax[i].c + t2;
            double plane = 0.0;
            for (std::size_t j = 0; j < na; ++j) {
              const double cij2 = ci2 + ax[j].c * ax[j].c;
              double row = 0.0;
              for (std::size_t k = 0; k < na; ++k) {
                const double rho = cij2 + ax[k].c * ax[k].c;
                row += ax[k].w / (rho * rho);
              }
              plane += ax[j].w * row;
            }
            v += ax[i].w * plane;
          }
          out[0] = v;
        },
        acc);
  }
  return hd * coef * acc[0];
}

void periodized_matrix_mass(const GridSpec& g, double t, int images,
                            double* out) {
  require(g.d == 1 || g.d == 2, "periodized_matrix_mass: d must be 1 or 2");
  const int n = g.d + 1;
  for (int i = 0; i < n * n; ++i) out[i] = 0.0;
  const double hd = std::pow(g.h(), g.d);
  const double coef = (2.0 * (g.d + 1) / omega(g.d)) * t;
  const double t2 = t * t;

  if (g.d == 1) {
    // Direct sweep over the extended axis; no folding needed at this size.
    const double h = g.h();
    const long E = static_cast<long>(2 * images + 1) * g.N;
    const double A = 0.5 * (2 * images + 1) * g.L;
    double acc[3];
    chunked_reduce(
        static_cast<std::size_t>(E), 3,
        [&](std::size_t b, std::size_t e, double* o) {
          for (std::size_t j = b; j < e; ++j) {
            const double x = -A + static_cast<double>(j) * h;
            const double rho = x * x + t2;
            const double w = 1.0 / (rho * rho);  // rho^{-(d+3)/2}, d=1
            o[0] += w * x * x;
            o[1] += w * x * t;
            o[2] += w * t2;
          }
        },
        acc);
    out[0] = hd * coef * acc[0];
    out[1] = out[2] = hd * coef * acc[1];
    out[3] = hd * coef * acc[2];
    return;
  }

  // d = 2: diagonal entries are even in both coordinates, so the quadrant
  // folding applies; the off-diagonal integrands are odd in at least one
  // coordinate and cancel on the mirrored part, leaving only the unpaired
  // edge row, which is accumulated separately below.
  const std::vector<AxisEntry> ax = folded_axis(g, images);
  const std::size_t na = ax.size();
  double diag[3];
  chunked_reduce(
      na, 3,
      [&](std::size_t b, std::size_t e, double* o) {
        for (std::size_t i = b; i < e; ++i) {
          const double x1 = ax[i].c;
          const double x12 = x1 * x1;
          const double base = x12 + t2;
          double s11 = 0.0, s22 = 0.0, s33 = 0.0;
          for (std::size_t j = 0; j < na; ++j) {
            const double x2 = ax[j].c;
            const double rho = base + x2 * x2;
            const double w = ax[j].w / (rho * rho * std::sqrt(rho));
            s11 += w * x12;
            s22 += w * x2 * x2;
            s33 += w;
          }
          o[0] += ax[i].w * s11;
          o[1] += ax[i].w * s22;
          o[2] += ax[i].w * t2 * s33;
        }
      },
      diag);

  // Unpaired edge at coordinate -A: its mirror at +A is absent, so odd
  // integrands pick up the single row/column contributions.
  const double A = 0.5 * (2 * images + 1) * g.L;
  const double h = g.h();
  const long E = static_cast<long>(2 * images + 1) * g.N;
  double edge[3] = {0.0, 0.0, 0.0};  // entries (1,2), (1,3), (2,3)
  for (long j = 0; j < E; ++j) {
    const double y = -A + static_cast<double>(j) * h;
    // Row x1 = -A, x2 = y.
    double rho = A * A + y * y + t2;
    double w = 1.0 / (rho * rho * std::sqrt(rho));
    edge[0] += w * (-A) * y;
    edge[1] += w * (-A) * t;
    edge[2] += w * y * t;
    // Column x2 = -A, x1 = y, skipping the shared corner.
    if (j > 0) {
      rho = y * y + A * A + t2;
      w = 1.0 / (rho * rho * std::sqrt(rho));
      edge[0] += w * y * (-A);
      edge[1] += w * y * t;
      edge[2] += w * (-A) * t;
    }
  }

  out[0] = hd * coef * diag[0];
  out[4] = hd * coef * diag[1];
  out[8] = hd * coef * diag[2];
  out[1] = out[3] = hd * coef * edge[0];
  out[2] = out[6] = hd * coef * edge[1];
  out[5] = out[7] = hd * coef * edge[2];
}

double scalar_mass_tail_bound(const GridSpec& g, double t, int images) {
  // Mass beyond the extended box, bounded with the inscribed-disk radius
  // shrunk by one box so node offsets cannot defeat it; factor 2 covers the
  // lattice-vs-integral gap.
  const double reff = 0.5 * (2 * images + 1) * g.L - 0.5 * g.L;
  const double sd1 = special::sphere_surface_measure(g.d - 1);
  return 2.0 * (2.0 * sd1 / omega(g.d)) * t / reff;
}

double matrix_mass_tail_bound(const GridSpec& g, double t, int images) {
  // Entrywise |P_t| <= (d+1) p_t.
  return (g.d + 1) * scalar_mass_tail_bound(g, t, images);
}

std::vector<double> sample_periodized_matrix_kernel(const GridSpec& g,
                                                    double t, int images) {
  require(g.d == 2, "sample_periodized_matrix_kernel: implemented for d = 2");
  require(images >= 1, "sample_periodized_matrix_kernel: images >= 1");
  const int n = g.d + 1;
  const std::size_t pts = g.points();
  std::vector<double> out(pts * n * n, 0.0);
  const double coef = (2.0 * (g.d + 1) / omega(g.d)) * t;
  const double t2 = t * t;
  const int M = images;

  // Per-node accumulation is independent, so parallel chunks over nodes
  // stay deterministic.
  parallel_for_chunks(
      pts,
      [&](std::size_t b, std::size_t e) {
        for (std::size_t flat = b; flat < e; ++flat) {
          const int i1 = static_cast<int>(flat) / g.N;
          const int i2 = static_cast<int>(flat) % g.N;
          const double x1 = g.coord(i1);
          const double x2 = g.coord(i2);
          double s11 = 0.0, s12 = 0.0, s13 = 0.0, s22 = 0.0, s23 = 0.0,
                 s33 = 0.0;
          for (int m1 = -M; m1 <= M; ++m1) {
            const double y1 = x1 + m1 * g.L;
            const double y12 = y1 * y1 + t2;
            for (int m2 = -M; m2 <= M; ++m2) {
              const double y2 = x2 + m2 * g.L;
              const double rho = y12 + y2 * y2;
              const double w = 1.0 / (rho * rho * std::sqrt(rho));
              s11 += w * y1 * y1;
              s12 += w * y1 * y2;
              s13 += w * y1;
              s22 += w * y2 * y2;
              s23 += w * y2;
              s33 += w;
            }
          }
          double* o = out.data() + flat * n * n;
          o[0] = coef * s11;
          o[1] = o[3] = coef * s12;
          o[2] = o[6] = coef * s13 * t;
          o[4] = coef * s22;
          o[5] = o[7] = coef * s23 * t;
          o[8] = coef * s33 * t2;
        }
      });
  return out;
}

double periodized_scalar_mass_extrapolated(const GridSpec& g, double t,
                                           int images1, int images2) {
  require(images2 > images1 && images1 >= 1,
          "mass extrapolation needs 1 <= images1 < images2");
  // The truncated mass differs from its limit by c / A + O(A^{-3}) where
  // A is the extended half-width; eliminate the leading term from two radii.
  const double a1 = 0.5 * (2 * images1 + 1) * g.L;
  const double a2 = 0.5 * (2 * images2 + 1) * g.L;
  const double m1 = periodized_scalar_mass(g, t, images1);
  const double m2 = periodized_scalar_mass(g, t, images2);
  const double c = (m2 - m1) / (1.0 / a1 - 1.0 / a2);
  return m2 + c / a2;
}

void periodized_matrix_mass_extrapolated(const GridSpec& g, double t,
                                         int images1, int images2,
                                         double* out) {
  require(images2 > images1 && images1 >= 1,
          "mass extrapolation needs 1 <= images1 < images2");
  const int n = g.d + 1;
  const double a1 = 0.5 * (2 * images1 + 1) * g.L;
  const double a2 = 0.5 * (2 * images2 + 1) * g.L;
  double m1[16], m2[16];
  periodized_matrix_mass(g, t, images1, m1);
  periodized_matrix_mass(g, t, images2, m2);
  for (int i = 0; i < n * n; ++i) {
    const double c = (m2[i] - m1[i]) / (1.0 / a1 - 1.0 / a2);
    out[i] = m2[i] + c / a2;
  }
}

}  // namespace korn
