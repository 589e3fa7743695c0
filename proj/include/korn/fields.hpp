#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include "korn/common.hpp"

// Periodic grids, sampled vector fields, and the Fourier bridge.
//
// Grids are uniform on the centered box [-L/2, L/2)^d with N nodes per axis,
// node coordinates x_k = -L/2 + k h, h = L/N. The continuous transform
// convention is F(g)(xi) = int e^{-i 2 pi xi . x} g(x) dx; to_spectral
// returns trapezoidal samples of that transform at the lattice frequencies
// xi = k/L, k in [-N/2, N/2)^d, and to_spatial inverts it exactly.

namespace korn {

struct GridSpec {
  int d = 2;
  int N = 64;
  double L = 40.0;

  double h() const { return L / N; }
  std::size_t points() const {
    std::size_t p = 1;
    for (int i = 0; i < d; ++i) p *= static_cast<std::size_t>(N);
    return p;
  }
  double coord(int i) const { return -0.5 * L + i * h(); }
  // Signed lattice index in [-N/2, N/2) for storage index i in [0, N).
  int signed_index(int i) const { return i < N / 2 ? i : i - N; }
  double freq(int i) const { return signed_index(i) / L; }
  // Storage index for a signed lattice index.
  int storage_index(int k) const { return (k % N + N) % N; }

  void node_multi(std::size_t flat, int* idx) const;
  std::size_t flat_index(const int* idx) const;
  void node_coords(std::size_t flat, double* x) const;

  bool operator==(const GridSpec&) const = default;
};

GridSpec make_grid(int d, double L, int N);

// Row-major node iteration, last axis fastest; fn(flat, idx) where idx is a
// d-entry multi-index.
template <typename Fn>
void for_each_node(const GridSpec& g, Fn&& fn) {
  int idx[3] = {0, 0, 0};
  const std::size_t n = g.points();
  for (std::size_t flat = 0; flat < n; ++flat) {
    fn(flat, static_cast<const int*>(idx));
    for (int ax = g.d - 1; ax >= 0; --ax) {
      if (++idx[ax] < g.N) break;
      idx[ax] = 0;
    }
  }
}

struct VectorField {
  GridSpec grid;
  int m = 1;
  std::vector<double> values;  // node-major, values[node * m + c]
  std::vector<std::string> notes;

  double* at(std::size_t node) { return values.data() + node * m; }
  const double* at(std::size_t node) const { return values.data() + node * m; }
};

VectorField make_field(const GridSpec& g, int m);

struct SpectralField {
  GridSpec grid;
  int m = 1;
  std::vector<std::complex<double>> coeffs;  // same layout as VectorField

  std::complex<double>* at(std::size_t node) { return coeffs.data() + node * m; }
  const std::complex<double>* at(std::size_t node) const {
    return coeffs.data() + node * m;
  }
};

SpectralField make_spectral_field(const GridSpec& g, int m);

SpectralField to_spectral(const VectorField& f);
// Inverse transform; returns the real part. Use spatial_imag_max to confirm
// a spectrum was Hermitian before discarding the imaginary part.
VectorField to_spatial(const SpectralField& F);
double spatial_imag_max(const SpectralField& F);
// max_k |F[-k] - conj(F[k])| over all modes and components.
double hermitian_defect(const SpectralField& F);

struct FracParams {
  double s = 0.5;
  double p = 2.0;
  double eps = 0.0;
};

// Throws unless s in (0,1), p in (1,inf), eps >= 0, s + eps < 1 and
// s - eps (p - 1) > 0. With for_embedding also requires s p != d.
void validate_frac(const FracParams& fp, int d, bool for_embedding = false);

struct FamilyParams {
  std::uint64_t seed = 0;
  int kmax = 8;
  double sigma = 1.5;
  std::array<double, 3> center{0.0, 0.0, 0.0};
  std::array<double, 3> amplitude{1.0, 0.0, 0.0};
  // Generator of the rotation part of the affine families. d=2 uses spin[0]
  // as the coefficient of the 90-degree rotation generator; d=3 uses the
  // full axis vector (W v = spin x v).
  std::array<double, 3> spin{1.0, 0.0, 0.0};
  std::array<double, 3> shift{0.0, 0.0, 0.0};
  // Per-component exponents of the monomial family, powers[c][axis].
  std::array<std::array<int, 3>, 3> powers{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  // Radial window: identically 1 inside window_inner, 0 outside
  // window_outer. Zeros select the defaults 0.2 L and 0.4 L.
  double window_inner = 0.0;
  double window_outer = 0.0;
};

// Families: "gaussian_bump", "windowed_skew_affine", "bandlimited_random",
// "windowed_monomial". All produce m = d components, are deterministic in
// (name, params, grid), and record a truncation note when the sampled field
// fails to vanish at the box boundary.
VectorField sample_family(const std::string& name, const GridSpec& g,
                          const FamilyParams& fp);

// (h^d sum_x |f(x)|_2^p)^{1/p} with the Euclidean magnitude over components;
// p = infinity gives the max magnitude.
double lp_norm(const VectorField& f, double p);
double lp_norm_masked(const VectorField& f, double p,
                      const std::vector<std::uint8_t>& mask);

// Pointwise helpers used throughout the checks.
void axpy(VectorField& y, double a, const VectorField& x);  // y += a x
double max_abs(const VectorField& f);

// Raw binary layout: header of four little-endian doubles {d, N, m, L}
// followed by the value array. CSV lists coordinates then components.
void write_field_binary(const VectorField& f, const std::string& path);
VectorField read_field_binary(const std::string& path);
void write_field_csv(const VectorField& f, const std::string& path);

}  // namespace korn
