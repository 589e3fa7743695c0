#include "korn/spectral_ops.hpp"

#include <cmath>
#include <sstream>

#include "korn/common.hpp"
#include "korn/kernels.hpp"

namespace korn {

namespace {

using cd = std::complex<double>;

void check_finite(const cd& v, const double* xi, int d) {
  if (std::isfinite(v.real()) && std::isfinite(v.imag())) return;
  std::ostringstream os;
  os << "symbol produced a non-finite value at xi = (";
  for (int j = 0; j < d; ++j) os << (j ? ", " : "") << xi[j];
  os << ")";
  throw std::runtime_error(os.str());
}

double radius(const double* xi, int d) {
  double r2 = 0.0;
  for (int j = 0; j < d; ++j) r2 += xi[j] * xi[j];
  return std::sqrt(r2);
}

VectorField apply_spectral(const VectorField& f, const ScalarSymbol& sym) {
  return to_spatial(apply_scalar_symbol(to_spectral(f), sym));
}

}  // namespace

SpectralField apply_scalar_symbol(const SpectralField& F, const ScalarSymbol& sym) {
  SpectralField out = F;
  for_each_freq(F.grid, [&](std::size_t flat, const double* xi) {
    const cd v = sym(xi);
    check_finite(v, xi, F.grid.d);
    for (int c = 0; c < F.m; ++c) out.coeffs[flat * F.m + c] *= v;
  });
  return out;
}

SpectralField apply_matrix_symbol(const SpectralField& F, int m_out, const MatrixSymbol& sym) {
  require(m_out >= 1 && m_out <= 4, "apply_matrix_symbol: m_out must be 1..4");
  SpectralField out;
  out.grid = F.grid;
  out.m = m_out;
  out.coeffs.assign(F.grid.points() * m_out, cd(0.0, 0.0));
  std::vector<cd> entries(static_cast<std::size_t>(m_out) * F.m);
  for_each_freq(F.grid, [&](std::size_t flat, const double* xi) {
    sym(xi, entries.data());
    const cd* in = F.coeffs.data() + flat * F.m;
    cd* dst = out.coeffs.data() + flat * m_out;
    for (int r = 0; r < m_out; ++r) {
      cd acc(0.0, 0.0);
      for (int c = 0; c < F.m; ++c) acc += entries[r * F.m + c] * in[c];
      check_finite(acc, xi, F.grid.d);
      dst[r] = acc;
    }
  });
  return out;
}

VectorField riesz_transform(const VectorField& f, int axis) {
  require(axis >= 0 && axis < f.grid.d, "riesz_transform: axis out of range");
  const int d = f.grid.d;
  return apply_spectral(f, [axis, d](const double* xi) {
    const double r = radius(xi, d);
    if (r == 0.0) return cd(0.0, 0.0);
    return cd(0.0, -xi[axis] / r);
  });
}

VectorField fractional_laplacian(const VectorField& f, double beta) {
  require(beta > 0.0 && beta < 1.0, "fractional_laplacian: beta must lie in (0,1)");
  const int d = f.grid.d;
  return apply_spectral(f, [beta, d](const double* xi) {
    const double r = radius(xi, d);
    if (r == 0.0) return cd(0.0, 0.0);
    return cd(std::pow(2.0 * M_PI * r, 2.0 * beta), 0.0);
  });
}

VectorField spatial_derivative(const VectorField& f, int axis) {
  require(axis >= 0 && axis < f.grid.d, "spatial_derivative: axis out of range");
  return apply_spectral(f, [axis](const double* xi) {
    return cd(0.0, 2.0 * M_PI * xi[axis]);
  });
}

VectorField divergence(const VectorField& f) {
  require(f.m == f.grid.d, "divergence: need one component per axis");
  const int d = f.grid.d;
  SpectralField F = to_spectral(f);
  SpectralField out;
  out.grid = f.grid;
  out.m = 1;
  out.coeffs.assign(f.grid.points(), cd(0.0, 0.0));
  for_each_freq(f.grid, [&](std::size_t flat, const double* xi) {
    cd acc(0.0, 0.0);
    for (int j = 0; j < d; ++j)
      acc += cd(0.0, 2.0 * M_PI * xi[j]) * F.coeffs[flat * d + j];
    out.coeffs[flat] = acc;
  });
  return to_spatial(out);
}

VectorField poisson_smooth(const VectorField& f, double t) {
  require(t > 0.0, "poisson_smooth: t must be positive");
  const int d = f.grid.d;
  return apply_spectral(f, [t, d](const double* xi) {
    return cd(std::exp(-2.0 * M_PI * radius(xi, d) * t), 0.0);
  });
}

VectorField poisson_smooth_dt(const VectorField& f, double t) {
  require(t > 0.0, "poisson_smooth_dt: t must be positive");
  const int d = f.grid.d;
  return apply_spectral(f, [t, d](const double* xi) {
    const double r = radius(xi, d);
    return cd(-2.0 * M_PI * r * std::exp(-2.0 * M_PI * r * t), 0.0);
  });
}

VectorField augment_with_zero(const VectorField& f) {
  require(f.m == f.grid.d, "augment_with_zero: need one component per axis");
  VectorField out = make_field(f.grid, f.m + 1);
  for (std::size_t n = 0; n < f.grid.points(); ++n)
    for (int c = 0; c < f.m; ++c)
      out.values[n * (f.m + 1) + c] = f.values[n * f.m + c];
  out.notes = f.notes;
  return out;
}

VectorField extract_component(const VectorField& f, int c) {
  require(c >= 0 && c < f.m, "extract_component: component out of range");
  VectorField out = make_field(f.grid, 1);
  for (std::size_t n = 0; n < f.grid.points(); ++n)
    out.values[n] = f.values[n * f.m + c];
  return out;
}

PoissonExtension poisson_extend(const VectorField& f, const std::vector<double>& t_levels) {
  require(!t_levels.empty(), "poisson_extend: t_levels must be non-empty");
  for (std::size_t i = 0; i < t_levels.size(); ++i) {
    require(t_levels[i] > 0.0, "poisson_extend: t levels must be positive");
    if (i) require(t_levels[i] > t_levels[i - 1], "poisson_extend: t levels must increase");
  }
  const int d = f.grid.d;
  const SpectralField F = to_spectral(f);
  std::vector<double> radii(f.grid.points());
  for_each_freq(f.grid, [&](std::size_t flat, const double* xi) {
    radii[flat] = radius(xi, d);
  });
  PoissonExtension ext;
  ext.base = f;
  ext.t_levels = t_levels;
  for (double t : t_levels) {
    SpectralField level = F, dlevel = F;
    for (std::size_t n = 0; n < f.grid.points(); ++n) {
      const double damp = std::exp(-2.0 * M_PI * radii[n] * t);
      const double ddamp = -2.0 * M_PI * radii[n] * damp;
      for (int c = 0; c < f.m; ++c) {
        level.coeffs[n * f.m + c] *= damp;
        dlevel.coeffs[n * f.m + c] *= ddamp;
      }
    }
    ext.u_levels.push_back(to_spatial(level));
    ext.dt_levels.push_back(to_spatial(dlevel));
  }
  return ext;
}

PoissonTypeExtension poisson_type_extend(const VectorField& F, const std::vector<double>& t_levels) {
  require(F.m == F.grid.d + 1, "poisson_type_extend: need m = d + 1");
  require(!t_levels.empty(), "poisson_type_extend: t_levels must be non-empty");
  for (std::size_t i = 0; i < t_levels.size(); ++i) {
    require(t_levels[i] > 0.0, "poisson_type_extend: t levels must be positive");
    if (i) require(t_levels[i] > t_levels[i - 1], "poisson_type_extend: t levels must increase");
  }
  const int d = F.grid.d;
  const SpectralField S = to_spectral(F);
  PoissonTypeExtension ext;
  ext.base = F;
  ext.t_levels = t_levels;
  for (double t : t_levels) {
    ext.u_levels.push_back(to_spatial(apply_matrix_symbol(
        S, d + 1, [d, t](const double* xi, cd* entries) {
          poisson_type_symbol(d, xi, t, entries);
        })));
    ext.dt_levels.push_back(to_spatial(apply_matrix_symbol(
        S, d + 1, [d, t](const double* xi, cd* entries) {
          poisson_type_symbol_dt(d, xi, t, entries);
        })));
  }
  return ext;
}

std::vector<double> default_t_levels(const GridSpec& g, int count) {
  require(count >= 2, "default_t_levels: need at least two levels");
  const double t0 = 0.5 * g.h();
  const double ratio = std::pow(g.L / t0, 1.0 / (count - 1));
  std::vector<double> out(count);
  for (int i = 0; i < count; ++i) out[i] = t0 * std::pow(ratio, i);
  out.back() = g.L;
  return out;
}

// The norm traces stream one level at a time instead of retaining the whole
// extension, which matters for long ladders on fine grids.
ExtensionNormTrace scalar_extension_norms(const VectorField& f,
                                          const std::vector<double>& t_levels, double p) {
  require(!t_levels.empty(), "scalar_extension_norms: t_levels must be non-empty");
  const int d = f.grid.d;
  const SpectralField F = to_spectral(f);
  std::vector<double> radii(f.grid.points());
  for_each_freq(f.grid, [&](std::size_t flat, const double* xi) {
    radii[flat] = radius(xi, d);
  });
  ExtensionNormTrace trace;
  trace.t_levels = t_levels;
  for (double t : t_levels) {
    require(t > 0.0, "scalar_extension_norms: t levels must be positive");
    SpectralField level = F;
    for (std::size_t n = 0; n < f.grid.points(); ++n) {
      const double damp = std::exp(-2.0 * M_PI * radii[n] * t);
      for (int c = 0; c < f.m; ++c) level.coeffs[n * f.m + c] *= damp;
    }
    trace.value_norm.push_back(lp_norm(to_spatial(level), p));
    for (std::size_t n = 0; n < f.grid.points(); ++n) {
      const double rate = -2.0 * M_PI * radii[n];
      for (int c = 0; c < f.m; ++c) level.coeffs[n * f.m + c] *= rate;
    }
    trace.dt_norm.push_back(lp_norm(to_spatial(level), p));
  }
  return trace;
}

ExtensionNormTrace matrix_extension_norms(const VectorField& F,
                                          const std::vector<double>& t_levels, double p) {
  require(F.m == F.grid.d + 1, "matrix_extension_norms: need m = d + 1");
  require(!t_levels.empty(), "matrix_extension_norms: t_levels must be non-empty");
  const int d = F.grid.d;
  const SpectralField S = to_spectral(F);
  ExtensionNormTrace trace;
  trace.t_levels = t_levels;
  for (double t : t_levels) {
    require(t > 0.0, "matrix_extension_norms: t levels must be positive");
    trace.value_norm.push_back(lp_norm(
        to_spatial(apply_matrix_symbol(S, d + 1,
                                       [d, t](const double* xi, cd* entries) {
                                         poisson_type_symbol(d, xi, t, entries);
                                       })),
        p));
    trace.dt_norm.push_back(lp_norm(
        to_spatial(apply_matrix_symbol(S, d + 1,
                                       [d, t](const double* xi, cd* entries) {
                                         poisson_type_symbol_dt(d, xi, t, entries);
                                       })),
        p));
  }
  return trace;
}

double rel_l2_error(const VectorField& got, const VectorField& want) {
  require(got.grid == want.grid && got.m == want.m,
          "rel_l2_error: fields must share grid and component count");
  VectorField diff = got;
  axpy(diff, -1.0, want);
  const double scale = lp_norm(want, 2.0);
  const double err = lp_norm(diff, 2.0);
  return scale > 0.0 ? err / scale : err;
}

}  // namespace korn
