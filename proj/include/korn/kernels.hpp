#pragma once

#include <complex>
#include <vector>

#include "korn/fields.hpp"

// Poisson kernel of the upper half-space R^d x (0, inf) and its matrix
// refinement built from the rank-one tensor (x, t) (x, t)^T, together with
// their Fourier symbols and t-derivatives. Entries are indexed row-major
// over (d+1) x (d+1); index d is the vertical slot.

namespace korn {

// p_t(x) = (2 / omega_d) t (|x|^2 + t^2)^{-(d+1)/2}, omega_d = |S^d|.
double poisson_kernel(int d, const double* x, double t);
double poisson_kernel_dt(int d, const double* x, double t);

// Matrix kernel (2 (d+1) / omega_d) t v v^T (|x|^2 + t^2)^{-(d+3)/2} with
// v = (x, t); out receives (d+1)^2 entries.
void poisson_type_kernel(int d, const double* x, double t, double* out);
void poisson_type_kernel_dt(int d, const double* x, double t, double* out);

// Scalar symbol e^{-2 pi t |xi|} and its t-derivative.
double poisson_symbol(int d, const double* xi, double t);
double poisson_symbol_dt(int d, const double* xi, double t);

// Nilpotent part of the matrix symbol: blocks -xi xi^T/|xi|^2, -i xi/|xi|,
// -i xi^T/|xi|, 1. Satisfies M^2 = 0. Undefined at xi = 0 (throws).
void symbol_nilpotent_part(int d, const double* xi, std::complex<double>* out);

// Matrix symbol e^{-2 pi |xi| t} (I + 2 pi |xi| t M(xi)); equals the
// identity at xi = 0.
void poisson_type_symbol(int d, const double* xi, double t,
                         std::complex<double>* out);
// d/dt of the matrix symbol: 2 pi |xi| e^{-2 pi |xi| t}
// (-I + (1 - 2 pi |xi| t) M(xi)); zero matrix at xi = 0.
void poisson_type_symbol_dt(int d, const double* xi, double t,
                            std::complex<double>* out);

// Trapezoidal integrals of the kernels periodized over `images` box lengths
// in every direction: h^d times the kernel sum over the extended lattice
// of half-width (2 images + 1) L / 2. These approach 1 and the identity
// matrix as the grid refines and the image radius grows.
double periodized_scalar_mass(const GridSpec& g, double t, int images);
void periodized_matrix_mass(const GridSpec& g, double t, int images,
                            double* out);

// Richardson extrapolation of the periodized masses in the extended
// half-width, removing the leading 1/A truncation term.
double periodized_scalar_mass_extrapolated(const GridSpec& g, double t,
                                           int images1, int images2);
void periodized_matrix_mass_extrapolated(const GridSpec& g, double t,
                                         int images1, int images2, double* out);

// Conservative bound on the mass missing beyond the extended lattice.
double scalar_mass_tail_bound(const GridSpec& g, double t, int images);
double matrix_mass_tail_bound(const GridSpec& g, double t, int images);

// Samples of the periodized matrix kernel at every grid node, (d+1)^2
// entries per node, node-major. Feeding these through to_spectral gives the
// discrete counterpart of the matrix symbol.
std::vector<double> sample_periodized_matrix_kernel(const GridSpec& g,
                                                    double t, int images);

}  // namespace korn
