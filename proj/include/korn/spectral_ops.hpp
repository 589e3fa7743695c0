#pragma once

/// Frequency-space operator calculus on periodic grids. Every convolution in
/// the library goes through exact closed-form symbols on the frequency
/// lattice; nothing here touches sampled spatial kernels.

#include <complex>
#include <functional>
#include <vector>

#include "korn/fields.hpp"

namespace korn {

/// Scalar multiplier xi -> m(xi), applied to every component.
using ScalarSymbol = std::function<std::complex<double>(const double* xi)>;

/// Matrix multiplier xi -> row-major (m_out x m_in) block.
using MatrixSymbol = std::function<void(const double* xi, std::complex<double>* entries)>;

/// Visits every frequency-lattice point with its physical frequency vector
/// xi_j = sigma(idx_j) / L.
template <typename Fn>
void for_each_freq(const GridSpec& g, Fn&& fn) {
  for_each_node(g, [&](std::size_t flat, const int* idx) {
    double xi[3] = {0.0, 0.0, 0.0};
    for (int j = 0; j < g.d; ++j) xi[j] = g.freq(idx[j]);
    fn(flat, static_cast<const double*>(xi));
  });
}

/// Throws if the symbol produces a non-finite value; the offending frequency
/// is reported in the message.
SpectralField apply_scalar_symbol(const SpectralField& F, const ScalarSymbol& sym);
SpectralField apply_matrix_symbol(const SpectralField& F, int m_out, const MatrixSymbol& sym);

/// Componentwise transform with multiplier -i xi_axis / |xi|; the zero
/// frequency maps to 0.
VectorField riesz_transform(const VectorField& f, int axis);

/// Componentwise multiplier (2 pi |xi|)^{2 beta}, beta in (0,1); the zero
/// frequency maps to 0.
VectorField fractional_laplacian(const VectorField& f, double beta);

/// Componentwise spectral derivative, multiplier 2 pi i xi_axis.
VectorField spatial_derivative(const VectorField& f, int axis);

/// Sum of component derivatives; requires m = d, returns m = 1.
VectorField divergence(const VectorField& f);

/// Scalar smoothing semigroup e^{-2 pi |xi| t} and its t-derivative,
/// componentwise.
VectorField poisson_smooth(const VectorField& f, double t);
VectorField poisson_smooth_dt(const VectorField& f, double t);

/// Appends one zero component (m = d -> m = d+1).
VectorField augment_with_zero(const VectorField& f);

/// Copies out a single component as a scalar field.
VectorField extract_component(const VectorField& f, int c);

struct PoissonExtension {
  VectorField base;
  std::vector<double> t_levels;
  std::vector<VectorField> u_levels;   // p_t * f per level
  std::vector<VectorField> dt_levels;  // d/dt of the level above
};

struct PoissonTypeExtension {
  VectorField base;
  std::vector<double> t_levels;
  std::vector<VectorField> u_levels;
  std::vector<VectorField> dt_levels;
};

/// Scalar semigroup at each level, one forward transform shared across
/// levels. Accepts any component count.
PoissonExtension poisson_extend(const VectorField& f, const std::vector<double>& t_levels);

/// Matrix semigroup at each level; requires m = d+1 (augment first).
PoissonTypeExtension poisson_type_extend(const VectorField& F, const std::vector<double>& t_levels);

/// Geometric ladder from h/2 to L inclusive.
std::vector<double> default_t_levels(const GridSpec& g, int count = 48);

/// Per-level L^p norms of the extension and of its t-derivative, without
/// retaining the level fields.
struct ExtensionNormTrace {
  std::vector<double> t_levels;
  std::vector<double> value_norm;
  std::vector<double> dt_norm;
};
ExtensionNormTrace scalar_extension_norms(const VectorField& f,
                                          const std::vector<double>& t_levels, double p);
ExtensionNormTrace matrix_extension_norms(const VectorField& F,
                                          const std::vector<double>& t_levels, double p);

/// l2 distance between fields divided by the l2 size of `want`.
double rel_l2_error(const VectorField& got, const VectorField& want);

}  // namespace korn
