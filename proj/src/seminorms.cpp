#include "korn/seminorms.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "korn/common.hpp"
#include "korn/special.hpp"
#include "korn/spectral_ops.hpp"

namespace korn {

namespace {

// Inclusive cutoff comparison, shared by the pair engine and the lattice
// symbol so both see exactly the same offset set.
bool within_cut(double r2, double rc2) { return r2 <= rc2 * (1.0 + 1e-12); }

int p_kind(double p) {
  if (p == 2.0) return 0;
  if (p == 3.0) return 1;
  return 2;
}

double magnitude_pow(double sq, double p, int kind) {
  // sq is the squared magnitude.
  if (kind == 0) return sq;
  if (kind == 1) return sq * std::sqrt(sq);
  return std::pow(sq, 0.5 * p);
}

struct OffsetTable {
  std::size_t n = 0;
  std::vector<int> dz;      // n * 3
  std::vector<double> unit;  // n * 3
  std::vector<double> w;     // n * n_sp, offset-major
};

OffsetTable build_offsets(const GridSpec& g, const std::vector<FracParams>& ps,
                          double r_cut) {
  OffsetTable t;
  const int d = g.d;
  const double h = g.h();
  const double rc2 = r_cut * r_cut;
  const std::size_t n_sp = ps.size();
  for_each_node(g, [&](std::size_t, const int* idx) {
    int s[3] = {0, 0, 0};
    double r2 = 0.0;
    bool origin = true;
    for (int ax = 0; ax < d; ++ax) {
      s[ax] = g.signed_index(idx[ax]);
      origin = origin && s[ax] == 0;
      r2 += (s[ax] * h) * (s[ax] * h);
    }
    if (origin || !within_cut(r2, rc2)) return;
    const double r = std::sqrt(r2);
    for (int ax = 0; ax < 3; ++ax) {
      t.dz.push_back(ax < d ? s[ax] : 0);
      t.unit.push_back(ax < d ? s[ax] * h / r : 0.0);
    }
    for (std::size_t i = 0; i < n_sp; ++i)
      t.w.push_back(std::pow(r, -(d + ps[i].s * ps[i].p)));
    ++t.n;
  });
  return t;
}

struct BaseList {
  std::vector<int> idx;  // n * 3 multi-indices
  std::size_t n = 0;
};

BaseList build_base(const GridSpec& g, const std::vector<std::uint8_t>* select) {
  BaseList b;
  for_each_node(g, [&](std::size_t flat, const int* idx) {
    if (select && !(*select)[flat]) return;
    for (int ax = 0; ax < 3; ++ax) b.idx.push_back(ax < g.d ? idx[ax] : 0);
    ++b.n;
  });
  return b;
}

struct RawSums {
  std::vector<double> proj;  // per (s,p), h^{2d} prefactor applied
  std::vector<double> full;
};

// One pass over base nodes x offsets accumulating both integrands for every
// requested (s, p). domain_mask filters the second endpoint; support_hint
// doubles pairs whose second endpoint lies outside the hint.
RawSums pair_core(const GridSpec& g, const VectorField& f,
                  const std::vector<FracParams>& ps, const BaseList& base,
                  const OffsetTable& off, const std::vector<std::uint8_t>* domain_mask,
                  const std::vector<std::uint8_t>* support_hint, bool want_projected) {
  const int d = g.d, m = f.m, N = g.N, wrap = g.N - 1;
  const std::size_t n_sp = ps.size();
  std::vector<double> pk(n_sp);
  std::vector<int> kind(n_sp);
  for (std::size_t i = 0; i < n_sp; ++i) {
    pk[i] = ps[i].p;
    kind[i] = p_kind(ps[i].p);
  }
  std::size_t stride[3] = {1, 1, 1};
  for (int ax = d - 2; ax >= 0; --ax)
    stride[ax] = stride[ax + 1] * static_cast<std::size_t>(N);

  const int width = static_cast<int>(2 * n_sp);
  std::vector<double> acc(width, 0.0);
  chunked_reduce(
      base.n, width,
      [&](std::size_t begin, std::size_t end, double* partial) {
        for (std::size_t b = begin; b < end; ++b) {
          const int* bi = base.idx.data() + b * 3;
          std::size_t xflat = 0;
          for (int ax = 0; ax < d; ++ax)
            xflat += static_cast<std::size_t>(bi[ax]) * stride[ax];
          const double* fx = f.values.data() + xflat * m;
          for (std::size_t o = 0; o < off.n; ++o) {
            const int* dz = off.dz.data() + o * 3;
            std::size_t yflat = 0;
            for (int ax = 0; ax < d; ++ax)
              yflat += static_cast<std::size_t>((bi[ax] + dz[ax]) & wrap) * stride[ax];
            if (domain_mask && !(*domain_mask)[yflat]) continue;
            double factor = 1.0;
            if (support_hint && !(*support_hint)[yflat]) factor = 2.0;
            const double* fy = f.values.data() + yflat * m;
            double sq = 0.0, dproj = 0.0;
            const double* u = off.unit.data() + o * 3;
            for (int c = 0; c < m; ++c) {
              const double dc = fy[c] - fx[c];
              sq += dc * dc;
              if (want_projected) dproj += dc * u[c];
            }
            const double* wrow = off.w.data() + o * n_sp;
            for (std::size_t i = 0; i < n_sp; ++i) {
              const double w = wrow[i] * factor;
              partial[2 * i] += magnitude_pow(sq, pk[i], kind[i]) * w;
              if (want_projected)
                partial[2 * i + 1] +=
                    magnitude_pow(dproj * dproj, pk[i], kind[i]) * w;
            }
          }
        }
      },
      acc.data());

  const double cell = std::pow(g.h(), 2.0 * d);
  RawSums out;
  out.full.resize(n_sp);
  out.proj.resize(n_sp);
  for (std::size_t i = 0; i < n_sp; ++i) {
    out.full[i] = acc[2 * i] * cell;
    out.proj[i] = acc[2 * i + 1] * cell;
  }
  return out;
}

VectorField coarsen_field(const VectorField& f) {
  const GridSpec cg = make_grid(f.grid.d, f.grid.L, f.grid.N / 2);
  VectorField out = make_field(cg, f.m);
  for_each_node(cg, [&](std::size_t flat, const int* idx) {
    int fine[3] = {0, 0, 0};
    for (int ax = 0; ax < f.grid.d; ++ax) fine[ax] = 2 * idx[ax];
    const double* src = f.values.data() + f.grid.flat_index(fine) * f.m;
    double* dst = out.values.data() + flat * f.m;
    for (int c = 0; c < f.m; ++c) dst[c] = src[c];
  });
  return out;
}

std::vector<std::uint8_t> coarsen_mask(const GridSpec& fine,
                                       const std::vector<std::uint8_t>& mask) {
  const GridSpec cg = make_grid(fine.d, fine.L, fine.N / 2);
  std::vector<std::uint8_t> out(cg.points(), 0);
  for_each_node(cg, [&](std::size_t flat, const int* idx) {
    int fi[3] = {0, 0, 0};
    for (int ax = 0; ax < fine.d; ++ax) fi[ax] = 2 * idx[ax];
    out[flat] = mask[fine.flat_index(fi)];
  });
  return out;
}

struct ResolvedOptions {
  double r_cut = 0.0;
  const std::vector<std::uint8_t>* domain_mask = nullptr;
  const std::vector<std::uint8_t>* support_hint = nullptr;
  bool with_bracket = true;
  std::vector<std::string> notes;
};

ResolvedOptions resolve_options(const VectorField& f, const PairSumOptions& opt) {
  ResolvedOptions r;
  require(!(opt.domain_mask && opt.support_hint),
          "pair sums: domain_mask and support_hint are mutually exclusive");
  r.domain_mask = opt.domain_mask;
  r.support_hint = opt.support_hint;
  r.with_bracket = opt.with_bracket;
  const GridSpec& g = f.grid;
  const double horizon = 0.5 * g.L * std::sqrt(static_cast<double>(g.d)) + g.h();
  if (opt.r_cut > 0.0)
    r.r_cut = std::min(opt.r_cut, horizon);
  else
    r.r_cut = opt.domain_mask ? horizon : 0.25 * g.L;
  if (r.domain_mask)
    require(r.domain_mask->size() == g.points(), "pair sums: mask size mismatch");
  if (r.support_hint) {
    require(r.support_hint->size() == g.points(), "pair sums: hint size mismatch");
    double inside = 0.0, outside = 0.0;
    for (std::size_t n = 0; n < g.points(); ++n) {
      double mag = 0.0;
      for (int c = 0; c < f.m; ++c) mag = std::max(mag, std::abs(f.values[n * f.m + c]));
      if ((*r.support_hint)[n]) inside = std::max(inside, mag);
      else outside = std::max(outside, mag);
    }
    require(outside <= 1e-12 * std::max(inside, 1e-300),
            "pair sums: field does not vanish outside support_hint");
    if (outside > 0.0)
      r.notes.push_back("support_hint leaks relative magnitude " +
                        std::to_string(outside / std::max(inside, 1e-300)));
  }
  return r;
}

// Far-tail bound for whole-space estimates: pairs beyond the cutoff (or the
// torus horizon L/2) contribute at most 2^p ||f||_p^p sigma R^{-sp} / (sp).
double tail_bound(const VectorField& f, const FracParams& fp, double r_cut,
                  double lp_p) {
  const GridSpec& g = f.grid;
  const double reach = std::min(r_cut, 0.5 * g.L);
  const double reff =
      std::max(reach - 0.5 * g.h() * std::sqrt(static_cast<double>(g.d)), 0.5 * reach);
  const double sigma = special::sphere_surface_measure(g.d - 1);
  return std::pow(2.0, fp.p) * lp_p * sigma * std::pow(reff, -fp.s * fp.p) /
         (fp.s * fp.p);
}

std::vector<PairSeminormPair> pair_seminorms_impl(const VectorField& f,
                                                  const std::vector<FracParams>& params,
                                                  const PairSumOptions& opt,
                                                  bool want_projected) {
  require(!params.empty(), "pair sums: need at least one (s, p)");
  for (const auto& fp : params) validate_frac(fp, f.grid.d);
  if (want_projected)
    require(f.m == f.grid.d, "projected seminorm: need one component per axis");
  const ResolvedOptions ro = resolve_options(f, opt);
  const GridSpec& g = f.grid;

  const OffsetTable off = build_offsets(g, params, ro.r_cut);
  const BaseList base =
      build_base(g, ro.domain_mask ? ro.domain_mask : ro.support_hint);
  require(base.n > 0, "pair sums: empty node selection");
  const RawSums sums = pair_core(g, f, params, base, off, ro.domain_mask,
                                 ro.support_hint, want_projected);

  // Coarse pass on the even-node restriction for the Richardson margin.
  RawSums coarse;
  bool have_coarse = false;
  if (ro.with_bracket && g.N / 2 >= 8) {
    const VectorField cf = coarsen_field(f);
    std::vector<std::uint8_t> cmask, chint;
    const std::vector<std::uint8_t>* cm = nullptr;
    const std::vector<std::uint8_t>* ch = nullptr;
    if (ro.domain_mask) {
      cmask = coarsen_mask(g, *ro.domain_mask);
      cm = &cmask;
    }
    if (ro.support_hint) {
      chint = coarsen_mask(g, *ro.support_hint);
      ch = &chint;
    }
    const BaseList cbase = build_base(cf.grid, cm ? cm : ch);
    if (cbase.n > 0) {
      const OffsetTable coff = build_offsets(cf.grid, params, ro.r_cut);
      coarse = pair_core(cf.grid, cf, params, cbase, coff, cm, ch, want_projected);
      have_coarse = true;
    }
  }

  std::vector<double> lp_cache(params.size());
  for (std::size_t i = 0; i < params.size(); ++i)
    lp_cache[i] = ro.domain_mask ? 0.0 : std::pow(lp_norm(f, params[i].p), params[i].p);

  std::vector<PairSeminormPair> out(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const FracParams& fp = params[i];
    const double tail = ro.domain_mask ? 0.0 : tail_bound(f, fp, ro.r_cut, lp_cache[i]);
    // The near-diagonal exclusion error scales like h^{p(1-s)} until the
    // plain quadrature order takes over.
    const double gamma = std::min(fp.p * (1.0 - fp.s), 2.0);
    const double richardson = 1.5 / (std::pow(2.0, gamma) - 1.0);

    auto assemble = [&](double sum_p, double coarse_p, const char* which) {
      SemiNormEstimate e;
      e.method = "pair_sum";
      e.params = fp;
      e.masked = ro.domain_mask != nullptr;
      e.notes = ro.notes;
      e.value = std::pow(sum_p, 1.0 / fp.p);
      double margin = 0.0;
      if (have_coarse)
        margin = richardson * std::abs(e.value - std::pow(coarse_p, 1.0 / fp.p));
      else if (ro.with_bracket)
        e.notes.push_back(std::string(which) +
                          ": grid too coarse for a two-resolution bracket");
      e.low = std::max(0.0, e.value - margin);
      e.high = std::pow(sum_p + tail, 1.0 / fp.p) + margin;
      return e;
    };

    if (want_projected)
      out[i].projected =
          assemble(sums.proj[i], have_coarse ? coarse.proj[i] : 0.0, "projected");
    out[i].gagliardo =
        assemble(sums.full[i], have_coarse ? coarse.full[i] : 0.0, "gagliardo");
  }
  return out;
}

}  // namespace

std::vector<PairSeminormPair> pair_seminorms(const VectorField& f,
                                             const std::vector<FracParams>& params,
                                             const PairSumOptions& opt) {
  return pair_seminorms_impl(f, params, opt, true);
}

SemiNormEstimate projected_seminorm(const VectorField& f, const FracParams& fp,
                                    const PairSumOptions& opt) {
  return pair_seminorms_impl(f, {fp}, opt, true)[0].projected;
}

SemiNormEstimate gagliardo_seminorm(const VectorField& f, const FracParams& fp,
                                    const PairSumOptions& opt) {
  return pair_seminorms_impl(f, {fp}, opt, false)[0].gagliardo;
}

double x_norm(const VectorField& f, const FracParams& fp, const PairSumOptions& opt) {
  const double body = opt.domain_mask ? lp_norm_masked(f, fp.p, *opt.domain_mask)
                                      : lp_norm(f, fp.p);
  const double semi = projected_seminorm(f, fp, opt).value;
  return std::pow(std::pow(body, fp.p) + std::pow(semi, fp.p), 1.0 / fp.p);
}

namespace {

double spectral_sum_p2(const VectorField& f, double s, bool projected) {
  const GridSpec& g = f.grid;
  const int d = g.d;
  require(!projected || f.m == d, "projected spectral oracle: need m = d");
  const auto mc = special::projected_multiplier_constants(d, s);
  const SpectralField F = to_spectral(f);
  double acc = 0.0;
  for_each_freq(g, [&](std::size_t flat, const double* xi) {
    double r2 = 0.0;
    for (int ax = 0; ax < d; ++ax) r2 += xi[ax] * xi[ax];
    if (r2 == 0.0) return;
    const double mult = std::pow(4.0 * M_PI * M_PI * r2, s);
    const std::complex<double>* row = F.coeffs.data() + flat * f.m;
    double mag2 = 0.0;
    for (int c = 0; c < f.m; ++c) mag2 += std::norm(row[c]);
    if (!projected) {
      acc += mc.q * mult * mag2;
      return;
    }
    std::complex<double> along(0.0, 0.0);
    const double r = std::sqrt(r2);
    for (int c = 0; c < d; ++c) along += row[c] * (xi[c] / r);
    acc += mult * (mc.l1 * mag2 + mc.l2 * std::norm(along));
  });
  return acc / std::pow(g.L, d);
}

// Exact symbol of the truncated lattice pair weight: one transform of the
// weight field a(z) = w(|z|) (times direction factors for the projected
// form), then M(k) = 2 (A(0) - Re A(k)).
double lattice_sum_p2(const VectorField& f, double s, double r_cut, bool projected) {
  const GridSpec& g = f.grid;
  const int d = g.d;
  require(!projected || f.m == d, "projected lattice oracle: need m = d");
  require(s > 0.0 && s < 1.0, "lattice oracle: s must lie in (0,1)");
  const double horizon = 0.5 * g.L * std::sqrt(static_cast<double>(d)) + g.h();
  const double rc = r_cut > 0.0 ? std::min(r_cut, horizon) : 0.25 * g.L;
  const double rc2 = rc * rc;

  const int pairs = projected ? d * (d + 1) / 2 : 1;
  std::vector<SpectralField> weights;
  std::vector<std::array<int, 2>> jk;
  const double h = g.h();
  for (int j = 0; j < (projected ? d : 1); ++j)
    for (int k = j; k < (projected ? d : j + 1); ++k) {
      VectorField a = make_field(g, 1);
      // Same displacement arithmetic as the pair engine (signed index times
      // h), so the cutoff shell is resolved identically in both routes. The
      // node at storage index i carries the displacement (i - N/2) h, which
      // is its min-image coordinate.
      for_each_node(g, [&](std::size_t flat, const int* idx) {
        double z[3] = {0.0, 0.0, 0.0};
        double r2 = 0.0;
        bool origin = true;
        for (int ax = 0; ax < d; ++ax) {
          const int sgn = idx[ax] - g.N / 2;
          origin = origin && sgn == 0;
          z[ax] = sgn * h;
          r2 += z[ax] * z[ax];
        }
        if (origin || !within_cut(r2, rc2)) return;
        const double r = std::sqrt(r2);
        const double w = std::pow(r, -(d + 2.0 * s));
        a.values[flat] = projected ? w * (z[j] / r) * (z[k] / r) : w;
      });
      weights.push_back(to_spectral(a));
      jk.push_back({j, k});
    }

  std::vector<double> at_zero(pairs);
  int zero_idx[3] = {0, 0, 0};
  const std::size_t zflat = g.flat_index(zero_idx);
  for (int q = 0; q < pairs; ++q) at_zero[q] = weights[q].coeffs[zflat].real();

  const SpectralField F = to_spectral(f);
  double acc = 0.0;
  for (std::size_t n = 0; n < g.points(); ++n) {
    const std::complex<double>* row = F.coeffs.data() + n * f.m;
    if (!projected) {
      const double mk = 2.0 * (at_zero[0] - weights[0].coeffs[n].real());
      double mag2 = 0.0;
      for (int c = 0; c < f.m; ++c) mag2 += std::norm(row[c]);
      acc += mk * mag2;
      continue;
    }
    for (int q = 0; q < pairs; ++q) {
      const int j = jk[q][0], k = jk[q][1];
      const double bjk = 2.0 * (at_zero[q] - weights[q].coeffs[n].real());
      const double cross = (row[j] * std::conj(row[k])).real();
      acc += bjk * cross * (j == k ? 1.0 : 2.0);
    }
  }
  return acc / std::pow(g.L, d);
}

}  // namespace

double gagliardo_p2_spectral(const VectorField& f, double s) {
  return std::sqrt(std::max(0.0, spectral_sum_p2(f, s, false)));
}

double projected_p2_spectral(const VectorField& f, double s) {
  return std::sqrt(std::max(0.0, spectral_sum_p2(f, s, true)));
}

double gagliardo_p2_lattice(const VectorField& f, double s, double r_cut) {
  return std::sqrt(std::max(0.0, lattice_sum_p2(f, s, r_cut, false)));
}

double projected_p2_lattice(const VectorField& f, double s, double r_cut) {
  return std::sqrt(std::max(0.0, lattice_sum_p2(f, s, r_cut, true)));
}

double pairing_p2_lattice(const VectorField& u, const VectorField& v,
                          const std::function<double(double)>& radial_weight) {
  const GridSpec& g = u.grid;
  const int d = g.d;
  require(v.grid == g, "pairing_p2_lattice: grids differ");
  require(u.m == d && v.m == d, "pairing_p2_lattice: need m = d");
  require(static_cast<bool>(radial_weight), "pairing_p2_lattice: empty weight");

  const double h = g.h();
  std::vector<SpectralField> weights;
  std::vector<std::array<int, 2>> jk;
  for (int j = 0; j < d; ++j)
    for (int k = j; k < d; ++k) {
      VectorField a = make_field(g, 1);
      // Displacements as signed index times h, matching the pair engine.
      // Every nonzero offset is kept; the weight callback owns any cutoff.
      for_each_node(g, [&](std::size_t flat, const int* idx) {
        double z[3] = {0.0, 0.0, 0.0};
        double r2 = 0.0;
        bool origin = true;
        for (int ax = 0; ax < d; ++ax) {
          const int sgn = idx[ax] - g.N / 2;
          origin = origin && sgn == 0;
          z[ax] = sgn * h;
          r2 += z[ax] * z[ax];
        }
        if (origin) return;
        const double r = std::sqrt(r2);
        a.values[flat] = radial_weight(r) * (z[j] / r) * (z[k] / r);
      });
      weights.push_back(to_spectral(a));
      jk.push_back({j, k});
    }

  int zero_idx[3] = {0, 0, 0};
  const std::size_t zflat = g.flat_index(zero_idx);
  const SpectralField U = to_spectral(u);
  const SpectralField V = to_spectral(v);

  double acc = 0.0;
  for (std::size_t n = 0; n < g.points(); ++n) {
    const std::complex<double>* ru = U.coeffs.data() + n * d;
    const std::complex<double>* rv = V.coeffs.data() + n * d;
    for (std::size_t q = 0; q < weights.size(); ++q) {
      const int j = jk[q][0], k = jk[q][1];
      const double bjk =
          2.0 * (weights[q].coeffs[zflat].real() - weights[q].coeffs[n].real());
      double cross = (ru[j] * std::conj(rv[k])).real();
      if (j != k) cross += (ru[k] * std::conj(rv[j])).real();
      acc += bjk * cross;
    }
  }
  return acc / std::pow(g.L, d);
}

SemiNormEstimate poisson_char_seminorm(const VectorField& f, const FracParams& fp,
                                       const std::vector<double>& t_levels,
                                       PoissonVariant variant) {
  validate_frac(fp, f.grid.d);
  require(t_levels.size() >= 2, "poisson_char_seminorm: need at least two levels");
  ExtensionNormTrace trace;
  if (variant == PoissonVariant::scalar) {
    trace = scalar_extension_norms(f, t_levels, fp.p);
  } else {
    require(f.m == f.grid.d, "poisson_char_seminorm: matrix variant needs m = d");
    trace = matrix_extension_norms(augment_with_zero(f), t_levels, fp.p);
  }

  const double rise = fp.p * (1.0 - fp.s);
  std::vector<double> G(t_levels.size());
  for (std::size_t i = 0; i < t_levels.size(); ++i)
    G[i] = std::pow(t_levels[i], rise) * std::pow(trace.dt_norm[i], fp.p);

  double trapz = 0.0;
  for (std::size_t i = 0; i + 1 < t_levels.size(); ++i)
    trapz += 0.5 * (G[i] + G[i + 1]) * std::log(t_levels[i + 1] / t_levels[i]);
  const double head = G.front() / rise;
  const double tail = G.back() / (fp.s * fp.p);

  SemiNormEstimate e;
  e.method = "spectral_t_integral";
  e.params = fp;
  e.value = std::pow(trapz + head + tail, 1.0 / fp.p);
  e.low = std::pow(trapz, 1.0 / fp.p);
  e.high = std::pow(trapz + 2.0 * (head + tail), 1.0 / fp.p);
  if (G.size() >= 2 && G.back() > G[G.size() - 2])
    e.notes.push_back("integrand still rising at t_max; tail attribution unreliable");
  return e;
}

DualProbeDictionary::DualProbeDictionary(const GridSpec& g, const SupportBox& box,
                                         std::uint64_t seed)
    : g_(g), box_(box), seed_(seed) {
  require(box.halfwidth >= 8.0 * g.h(),
          "DualProbeDictionary: support box needs at least 8 cells of halfwidth");
  require(box.halfwidth <= 0.5 * g.L, "DualProbeDictionary: box exceeds the grid");
  hint_.assign(g.points(), 0);
  for_each_node(g, [&](std::size_t flat, const int* idx) {
    (void)idx;
    double x[3];
    g.node_coords(flat, x);
    bool inside = true;
    for (int ax = 0; ax < g.d; ++ax)
      if (std::abs(x[ax] - box.center[ax]) > box.halfwidth + g.h()) inside = false;
    hint_[flat] = inside ? 1 : 0;
  });
}

const VectorField& DualProbeDictionary::probe(int i) {
  require(i >= 0, "probe index must be non-negative");
  while (static_cast<int>(probes_.size()) <= i) {
    const int id = static_cast<int>(probes_.size());
    std::mt19937_64 rng(seed_ ^ (0x9E3779B97F4A7C15ULL * (id + 1)));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const int d = g_.d;

    const double r1 = box_.halfwidth * (0.35 + 0.25 * u01(rng));
    double c[3] = {0.0, 0.0, 0.0};
    for (int ax = 0; ax < d; ++ax)
      c[ax] = box_.center[ax] + (box_.halfwidth - r1) * (2.0 * u01(rng) - 1.0);

    VectorField phi = make_field(g_, d);
    if (id % 2 == 0) {
      int exps[3][3];
      double amp[3];
      for (int comp = 0; comp < d; ++comp) {
        amp[comp] = (u01(rng) < 0.5 ? -1.0 : 1.0) * (0.5 + 0.5 * u01(rng));
        for (int ax = 0; ax < d; ++ax)
          exps[comp][ax] = static_cast<int>(3.0 * u01(rng));  // 0, 1, or 2
      }
      for_each_node(g_, [&](std::size_t flat, const int* idx) {
        (void)idx;
        double x[3];
        g_.node_coords(flat, x);
        double r2 = 0.0;
        for (int ax = 0; ax < d; ++ax) r2 += (x[ax] - c[ax]) * (x[ax] - c[ax]);
        const double win =
            special::radial_window(std::sqrt(r2), 0.45 * r1, 0.95 * r1);
        if (win == 0.0) return;
        for (int comp = 0; comp < d; ++comp) {
          double v = amp[comp] * win;
          for (int ax = 0; ax < d; ++ax)
            for (int e = 0; e < exps[comp][ax]; ++e) v *= (x[ax] - c[ax]) / r1;
          phi.values[flat * d + comp] = v;
        }
      });
    } else {
      double kvec[3][3], amp[3], phase[3];
      for (int comp = 0; comp < d; ++comp) {
        amp[comp] = (u01(rng) < 0.5 ? -1.0 : 1.0) * (0.5 + 0.5 * u01(rng));
        phase[comp] = 2.0 * M_PI * u01(rng);
        for (int ax = 0; ax < d; ++ax)
          kvec[comp][ax] = 1.0 + std::floor(3.0 * u01(rng));  // 1..3 half-waves
      }
      for_each_node(g_, [&](std::size_t flat, const int* idx) {
        (void)idx;
        double x[3];
        g_.node_coords(flat, x);
        double r2 = 0.0;
        for (int ax = 0; ax < d; ++ax) r2 += (x[ax] - c[ax]) * (x[ax] - c[ax]);
        const double win =
            special::radial_window(std::sqrt(r2), 0.45 * r1, 0.95 * r1);
        if (win == 0.0) return;
        for (int comp = 0; comp < d; ++comp) {
          double arg = phase[comp];
          for (int ax = 0; ax < d; ++ax)
            arg += M_PI * kvec[comp][ax] * (x[ax] - c[ax]) / r1;
          phi.values[flat * d + comp] = amp[comp] * win * std::cos(arg);
        }
      });
    }
    probes_.push_back(std::move(phi));
  }
  return probes_[i];
}

double DualProbeDictionary::normalization(int i, const FracParams& fp) {
  const std::array<double, 3> key = {static_cast<double>(i), fp.s, fp.p};
  const auto it = norm_cache_.find(key);
  if (it != norm_cache_.end()) return it->second;
  const VectorField& phi = probe(i);
  PairSumOptions opt;
  opt.support_hint = &hint_;
  opt.with_bracket = false;
  const double norm = projected_seminorm(phi, fp, opt).value;
  norm_cache_[key] = norm;
  return norm;
}

double dual_norm_estimate(const std::function<double(const VectorField&)>& functional,
                          DualProbeDictionary& dict, const FracParams& fp, int budget) {
  require(budget >= 32, "dual_norm_estimate: probe budget must be at least 32");
  double best = 0.0;
  for (int i = 0; i < budget; ++i) {
    const double norm = dict.normalization(i, fp);
    if (norm < 1e-14) continue;
    best = std::max(best, std::abs(functional(dict.probe(i))) / norm);
  }
  return best;
}

}  // namespace korn
