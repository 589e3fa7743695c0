#include "korn/fields.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <random>

#include "korn/special.hpp"

static_assert(std::endian::native == std::endian::little,
              "field binary format assumes a little-endian host");

namespace korn {

void GridSpec::node_multi(std::size_t flat, int* idx) const {
  for (int ax = d - 1; ax >= 0; --ax) {
    idx[ax] = static_cast<int>(flat % N);
    flat /= N;
  }
}

std::size_t GridSpec::flat_index(const int* idx) const {
  std::size_t f = 0;
  for (int ax = 0; ax < d; ++ax) f = f * N + static_cast<std::size_t>(idx[ax]);
  return f;
}

void GridSpec::node_coords(std::size_t flat, double* x) const {
  int idx[3];
  node_multi(flat, idx);
  for (int ax = 0; ax < d; ++ax) x[ax] = coord(idx[ax]);
}

GridSpec make_grid(int d, double L, int N) {
  require(d >= 1 && d <= 3, "make_grid: d must be 1, 2, or 3");
  require(L > 0.0, "make_grid: L must be positive");
  require(N >= 8 && (N & (N - 1)) == 0, "make_grid: N must be a power of two >= 8");
  return GridSpec{d, N, L};
}

namespace {

void check_m(const GridSpec& g, int m) {
  require(m == 1 || m == g.d || m == g.d + 1,
          "field component count must be 1, d, or d+1");
}

std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}

// Executes an in-place c2c transform over all components at once.
void run_fft(const GridSpec& g, int m, std::complex<double>* buf, int sign) {
  int dims[3];
  for (int ax = 0; ax < g.d; ++ax) dims[ax] = g.N;
  auto* raw = reinterpret_cast<fftw_complex*>(buf);
  fftw_plan plan;
  {
    std::lock_guard<std::mutex> lk(planner_mutex());
    plan = fftw_plan_many_dft(g.d, dims, m, raw, nullptr, m, 1, raw, nullptr, m,
                              1, sign, FFTW_ESTIMATE);
  }
  require(plan != nullptr, "fftw plan creation failed");
  fftw_execute(plan);
  {
    std::lock_guard<std::mutex> lk(planner_mutex());
    fftw_destroy_plan(plan);
  }
}

}  // namespace

VectorField make_field(const GridSpec& g, int m) {
  check_m(g, m);
  VectorField f;
  f.grid = g;
  f.m = m;
  f.values.assign(g.points() * m, 0.0);
  return f;
}

SpectralField make_spectral_field(const GridSpec& g, int m) {
  check_m(g, m);
  SpectralField F;
  F.grid = g;
  F.m = m;
  F.coeffs.assign(g.points() * m, {0.0, 0.0});
  return F;
}

SpectralField to_spectral(const VectorField& f) {
  SpectralField F = make_spectral_field(f.grid, f.m);
  for (std::size_t i = 0; i < f.values.size(); ++i) F.coeffs[i] = f.values[i];
  run_fft(f.grid, f.m, F.coeffs.data(), FFTW_FORWARD);
  // Centered-grid phase: samples live at x = -L/2 + n h, so the plain DFT
  // acquires the factor (-1)^{k_1 + ... + k_d} at output k; h^d turns the
  // sum into a trapezoidal integral.
  const double hd = std::pow(f.grid.h(), f.grid.d);
  for_each_node(f.grid, [&](std::size_t flat, const int* idx) {
    int par = 0;
    for (int ax = 0; ax < f.grid.d; ++ax) par += idx[ax];
    const double sc = (par & 1) ? -hd : hd;
    for (int c = 0; c < f.m; ++c) F.coeffs[flat * f.m + c] *= sc;
  });
  return F;
}

VectorField to_spatial(const SpectralField& F) {
  std::vector<std::complex<double>> buf(F.coeffs.size());
  const double ld = std::pow(F.grid.L, -F.grid.d);
  for_each_node(F.grid, [&](std::size_t flat, const int* idx) {
    int par = 0;
    for (int ax = 0; ax < F.grid.d; ++ax) par += idx[ax];
    const double sc = (par & 1) ? -ld : ld;
    for (int c = 0; c < F.m; ++c) buf[flat * F.m + c] = F.coeffs[flat * F.m + c] * sc;
  });
  run_fft(F.grid, F.m, buf.data(), FFTW_BACKWARD);
  VectorField f = make_field(F.grid, F.m);
  for (std::size_t i = 0; i < buf.size(); ++i) f.values[i] = buf[i].real();
  return f;
}

double spatial_imag_max(const SpectralField& F) {
  std::vector<std::complex<double>> buf(F.coeffs.size());
  const double ld = std::pow(F.grid.L, -F.grid.d);
  for_each_node(F.grid, [&](std::size_t flat, const int* idx) {
    int par = 0;
    for (int ax = 0; ax < F.grid.d; ++ax) par += idx[ax];
    const double sc = (par & 1) ? -ld : ld;
    for (int c = 0; c < F.m; ++c) buf[flat * F.m + c] = F.coeffs[flat * F.m + c] * sc;
  });
  run_fft(F.grid, F.m, buf.data(), FFTW_BACKWARD);
  double mx = 0.0;
  for (const auto& z : buf) mx = std::max(mx, std::abs(z.imag()));
  return mx;
}

double hermitian_defect(const SpectralField& F) {
  const GridSpec& g = F.grid;
  double mx = 0.0;
  for_each_node(g, [&](std::size_t flat, const int* idx) {
    int ridx[3];
    for (int ax = 0; ax < g.d; ++ax) ridx[ax] = (g.N - idx[ax]) % g.N;
    const std::size_t rflat = g.flat_index(ridx);
    for (int c = 0; c < F.m; ++c) {
      const std::complex<double> dfr =
          F.coeffs[rflat * F.m + c] - std::conj(F.coeffs[flat * F.m + c]);
      mx = std::max(mx, std::abs(dfr));
    }
  });
  return mx;
}

void validate_frac(const FracParams& fp, int d, bool for_embedding) {
  require(fp.s > 0.0 && fp.s < 1.0, "FracParams: s must lie in (0,1)");
  require(fp.p > 1.0 && std::isfinite(fp.p), "FracParams: p must lie in (1,inf)");
  require(fp.eps >= 0.0, "FracParams: eps must be >= 0");
  require(fp.s + fp.eps < 1.0, "FracParams: s + eps must stay below 1");
  require(fp.s - fp.eps * (fp.p - 1.0) > 0.0,
          "FracParams: s - eps (p-1) must stay positive");
  if (for_embedding)
    require(std::abs(fp.s * fp.p - d) > 1e-12,
            "FracParams: s p = d excluded for embedding checks");
}

namespace {

struct WindowRadii {
  double r0, r1;
};

WindowRadii window_radii(const GridSpec& g, const FamilyParams& fp) {
  WindowRadii w;
  w.r0 = fp.window_inner > 0.0 ? fp.window_inner : 0.2 * g.L;
  w.r1 = fp.window_outer > 0.0 ? fp.window_outer : 0.4 * g.L;
  require(w.r0 < w.r1 && w.r1 <= 0.5 * g.L,
          "family window must satisfy 0 < inner < outer <= L/2");
  return w;
}

void skew_apply(int d, const std::array<double, 3>& spin, const double* x,
                double* out) {
  if (d == 1) {
    out[0] = 0.0;
  } else if (d == 2) {
    out[0] = -spin[0] * x[1];
    out[1] = spin[0] * x[0];
  } else {
    out[0] = spin[1] * x[2] - spin[2] * x[1];
    out[1] = spin[2] * x[0] - spin[0] * x[2];
    out[2] = spin[0] * x[1] - spin[1] * x[0];
  }
}

void add_boundary_note(VectorField& f) {
  const GridSpec& g = f.grid;
  double mxall = 0.0, mxb = 0.0;
  for_each_node(g, [&](std::size_t flat, const int* idx) {
    double mag = 0.0;
    for (int c = 0; c < f.m; ++c) mag = std::max(mag, std::abs(f.values[flat * f.m + c]));
    mxall = std::max(mxall, mag);
    bool boundary = false;
    for (int ax = 0; ax < g.d; ++ax)
      if (idx[ax] == 0 || idx[ax] == g.N - 1) boundary = true;
    if (boundary) mxb = std::max(mxb, mag);
  });
  if (mxall > 0.0 && mxb > 1e-12 * mxall) {
    f.notes.push_back("truncation: boundary magnitude " + std::to_string(mxb) +
                      " exceeds 1e-12 of peak " + std::to_string(mxall));
  }
}

VectorField family_gaussian(const GridSpec& g, const FamilyParams& fp) {
  VectorField f = make_field(g, g.d);
  const double inv2s = 1.0 / (2.0 * fp.sigma * fp.sigma);
  for_each_node(g, [&](std::size_t flat, const int*) {
    double x[3];
    g.node_coords(flat, x);
    double r2 = 0.0;
    for (int ax = 0; ax < g.d; ++ax) {
      const double dlt = x[ax] - fp.center[ax];
      r2 += dlt * dlt;
    }
    const double e = std::exp(-r2 * inv2s);
    for (int c = 0; c < g.d; ++c) f.values[flat * g.d + c] = fp.amplitude[c] * e;
  });
  return f;
}

VectorField family_skew_affine(const GridSpec& g, const FamilyParams& fp) {
  VectorField f = make_field(g, g.d);
  const WindowRadii w = window_radii(g, fp);
  for_each_node(g, [&](std::size_t flat, const int*) {
    double x[3], wx[3];
    g.node_coords(flat, x);
    double r2 = 0.0;
    for (int ax = 0; ax < g.d; ++ax) r2 += x[ax] * x[ax];
    const double eta = special::radial_window(std::sqrt(r2), w.r0, w.r1);
    skew_apply(g.d, fp.spin, x, wx);
    for (int c = 0; c < g.d; ++c)
      f.values[flat * g.d + c] = eta * (wx[c] + fp.shift[c]);
  });
  return f;
}

VectorField family_monomial(const GridSpec& g, const FamilyParams& fp) {
  VectorField f = make_field(g, g.d);
  const WindowRadii w = window_radii(g, fp);
  for_each_node(g, [&](std::size_t flat, const int*) {
    double x[3];
    g.node_coords(flat, x);
    double r2 = 0.0;
    for (int ax = 0; ax < g.d; ++ax) r2 += x[ax] * x[ax];
    const double eta = special::radial_window(std::sqrt(r2), w.r0, w.r1);
    for (int c = 0; c < g.d; ++c) {
      double v = 1.0;
      for (int ax = 0; ax < g.d; ++ax)
        for (int k = 0; k < fp.powers[c][ax]; ++k) v *= x[ax];
      f.values[flat * g.d + c] = eta * v;
    }
  });
  return f;
}

VectorField family_bandlimited(const GridSpec& g, const FamilyParams& fp) {
  require(fp.kmax >= 1 && fp.kmax <= g.N / 2 - 1,
          "bandlimited_random: kmax must lie in [1, N/2 - 1]");
  SpectralField F = make_spectral_field(g, g.d);
  // Count of nonzero modes in the band, conjugate pairs included.
  std::size_t total = 1;
  for (int ax = 0; ax < g.d; ++ax) total *= static_cast<std::size_t>(2 * fp.kmax + 1);
  total -= 1;
  const double amp = std::pow(g.L, 0.5 * g.d) / std::sqrt(static_cast<double>(total));

  for (int c = 0; c < g.d; ++c) {
    std::mt19937_64 rng(fp.seed ^ (0x9E3779B97F4A7C15ull * (c + 1)));
    std::normal_distribution<double> normal(0.0, 1.0);
    // Half-space iteration in an N-independent order: lexicographic over the
    // band, keeping multi-indices whose first nonzero entry is positive.
    int k[3] = {0, 0, 0};
    auto recurse = [&](auto&& self, int ax) -> void {
      if (ax == g.d) {
        int lead = 0;
        for (int a = 0; a < g.d; ++a) {
          if (k[a] != 0) {
            lead = k[a];
            break;
          }
        }
        if (lead <= 0) return;
        const double re = normal(rng), im = normal(rng);
        const std::complex<double> z(re * amp / std::sqrt(2.0),
                                     im * amp / std::sqrt(2.0));
        int pos[3], neg[3];
        for (int a = 0; a < g.d; ++a) {
          pos[a] = g.storage_index(k[a]);
          neg[a] = g.storage_index(-k[a]);
        }
        F.coeffs[F.grid.flat_index(pos) * F.m + c] = z;
        F.coeffs[F.grid.flat_index(neg) * F.m + c] = std::conj(z);
        return;
      }
      for (k[ax] = -fp.kmax; k[ax] <= fp.kmax; ++k[ax]) self(self, ax + 1);
    };
    recurse(recurse, 0);
  }
  return to_spatial(F);
}

}  // namespace

VectorField sample_family(const std::string& name, const GridSpec& g,
                          const FamilyParams& fp) {
  VectorField f;
  if (name == "gaussian_bump") {
    f = family_gaussian(g, fp);
  } else if (name == "windowed_skew_affine") {
    f = family_skew_affine(g, fp);
  } else if (name == "windowed_monomial") {
    f = family_monomial(g, fp);
  } else if (name == "bandlimited_random") {
    return family_bandlimited(g, fp);  // periodic by construction, no decay note
  } else {
    fail("sample_family: unknown family " + name);
  }
  add_boundary_note(f);
  return f;
}

double lp_norm(const VectorField& f, double p) {
  static const std::vector<std::uint8_t> no_mask;
  return lp_norm_masked(f, p, no_mask);
}

double lp_norm_masked(const VectorField& f, double p,
                      const std::vector<std::uint8_t>& mask) {
  require(p >= 1.0, "lp_norm: p must be >= 1");
  const std::size_t n = f.grid.points();
  require(mask.empty() || mask.size() == n, "lp_norm: mask size mismatch");
  if (std::isinf(p)) {
    double mx = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!mask.empty() && !mask[i]) continue;
      double m2 = 0.0;
      for (int c = 0; c < f.m; ++c) {
        const double x = f.values[i * f.m + c];
        m2 += x * x;
      }
      mx = std::max(mx, std::sqrt(m2));
    }
    return mx;
  }
  double acc[1];
  chunked_reduce(
      n, 1,
      [&](std::size_t b, std::size_t e, double* out) {
        double v = 0.0;
        for (std::size_t i = b; i < e; ++i) {
          if (!mask.empty() && !mask[i]) continue;
          double m2 = 0.0;
          for (int c = 0; c < f.m; ++c) {
            const double x = f.values[i * f.m + c];
            m2 += x * x;
          }
          if (p == 2.0) {
            v += m2;
          } else if (p == 3.0) {
            v += m2 * std::sqrt(m2);
          } else {
            v += std::pow(std::sqrt(m2), p);
          }
        }
        out[0] = v;
      },
      acc);
  return std::pow(std::pow(f.grid.h(), f.grid.d) * acc[0], 1.0 / p);
}

void axpy(VectorField& y, double a, const VectorField& x) {
  require(y.grid == x.grid && y.m == x.m, "axpy: field layout mismatch");
  for (std::size_t i = 0; i < y.values.size(); ++i) y.values[i] += a * x.values[i];
}

double max_abs(const VectorField& f) {
  double mx = 0.0;
  for (double v : f.values) mx = std::max(mx, std::abs(v));
  return mx;
}

void write_field_binary(const VectorField& f, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "write_field_binary: cannot open " + path);
  const double header[4] = {static_cast<double>(f.grid.d),
                            static_cast<double>(f.grid.N),
                            static_cast<double>(f.m), f.grid.L};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(f.values.data()),
            static_cast<std::streamsize>(f.values.size() * sizeof(double)));
  require(out.good(), "write_field_binary: write failed for " + path);
}

VectorField read_field_binary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "read_field_binary: cannot open " + path);
  double header[4];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  require(in.good(), "read_field_binary: truncated header in " + path);
  const GridSpec g = make_grid(static_cast<int>(header[0]), header[3],
                               static_cast<int>(header[1]));
  VectorField f = make_field(g, static_cast<int>(header[2]));
  in.read(reinterpret_cast<char*>(f.values.data()),
          static_cast<std::streamsize>(f.values.size() * sizeof(double)));
  require(in.good(), "read_field_binary: truncated data in " + path);
  return f;
}

void write_field_csv(const VectorField& f, const std::string& path) {
  std::ofstream out(path);
  require(out.good(), "write_field_csv: cannot open " + path);
  out.precision(17);
  for (int ax = 0; ax < f.grid.d; ++ax) out << "x" << (ax + 1) << ",";
  for (int c = 0; c < f.m; ++c) out << "f" << (c + 1) << (c + 1 == f.m ? "" : ",");
  out << "\n";
  for_each_node(f.grid, [&](std::size_t flat, const int*) {
    double x[3];
    f.grid.node_coords(flat, x);
    for (int ax = 0; ax < f.grid.d; ++ax) out << x[ax] << ",";
    for (int c = 0; c < f.m; ++c)
      out << f.values[flat * f.m + c] << (c + 1 == f.m ? "" : ",");
    out << "\n";
  });
  require(out.good(), "write_field_csv: write failed for " + path);
}

}  // namespace korn
