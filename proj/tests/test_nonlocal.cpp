/// @file
/// Nonlocal system assembly and solvers. References here are written from
/// scratch: a triple-loop pair sum over explicit coordinates, quadrature of
/// the near-field shell average, finite differences of the energy, and the
/// spectral route for the p = 2 pairing.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include <json.hpp>

#include "korn/fields.hpp"
#include "korn/nonlocal.hpp"
#include "korn/seminorms.hpp"
#include "korn/special.hpp"

using namespace korn;

namespace {

std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double amp) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-amp, amp);
  std::vector<double> v(n);
  for (double& x : v) x = uni(rng);
  return v;
}

double rel_diff(double a, double b) {
  const double scale = std::max({std::fabs(a), std::fabs(b), 1e-300});
  return std::fabs(a - b) / scale;
}

double vec_rel_l2(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num += (a[k] - b[k]) * (a[k] - b[k]);
    den += b[k] * b[k];
  }
  return std::sqrt(num) / std::sqrt(std::max(den, 1e-300));
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

// From-scratch reference assembly over explicit coordinates. Valid when no
// pair wraps around the torus, which holds for every problem used with it.
struct RefAssembly {
  int d;
  double s, p;
  double h_sing;
  CoeffSpec coeff;

  double point_factor(const double* x) const {
    if (coeff.kind == CoeffSpec::Kind::constant) return coeff.value;
    long long par = 0;
    for (int ax = 0; ax < d; ++ax)
      par += static_cast<long long>(std::floor(x[ax] / coeff.cell));
    return ((par % 2) + 2) % 2 == 0 ? coeff.low : coeff.high;
  }

  double kernel(double r) const {
    const double sp = s * p;
    if (r <= h_sing * (1.0 + 1e-9)) {
      const double a = 0.5 * h_sing, b = 1.5 * h_sing;
      return ((std::pow(a, -sp) - std::pow(b, -sp)) / sp) /
             ((std::pow(b, d) - std::pow(a, d)) / d);
    }
    return std::pow(r, -(d + sp));
  }

  double pairing(const NonlocalProblem& pr, const std::vector<double>& u,
                 const std::vector<double>& v) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < pr.size(); ++i)
      for (std::size_t j = 0; j < pr.size(); ++j) {
        if (i == j) continue;
        const double* xi = pr.coords.data() + i * d;
        const double* xj = pr.coords.data() + j * d;
        double rr = 0.0;
        for (int ax = 0; ax < d; ++ax) rr += (xi[ax] - xj[ax]) * (xi[ax] - xj[ax]);
        const double r = std::sqrt(rr);
        double Du = 0.0, Dv = 0.0;
        for (int ax = 0; ax < d; ++ax) {
          Du += (u[i * d + ax] - u[j * d + ax]) * (xi[ax] - xj[ax]) / r;
          Dv += (v[i * d + ax] - v[j * d + ax]) * (xi[ax] - xj[ax]) / r;
        }
        const double a = 0.5 * (point_factor(xi) + point_factor(xj));
        acc += pr.weight[i] * pr.weight[j] * a * kernel(r) *
               std::pow(std::fabs(Du), p - 2.0) * Du * Dv;
      }
    return acc;
  }

  double energy_value(const NonlocalProblem& pr, const std::vector<double>& u) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < pr.size(); ++i)
      for (std::size_t j = 0; j < pr.size(); ++j) {
        if (i == j) continue;
        const double* xi = pr.coords.data() + i * d;
        const double* xj = pr.coords.data() + j * d;
        double rr = 0.0;
        for (int ax = 0; ax < d; ++ax) rr += (xi[ax] - xj[ax]) * (xi[ax] - xj[ax]);
        const double r = std::sqrt(rr);
        double Du = 0.0;
        for (int ax = 0; ax < d; ++ax)
          Du += (u[i * d + ax] - u[j * d + ax]) * (xi[ax] - xj[ax]) / r;
        const double a = 0.5 * (point_factor(xi) + point_factor(xj));
        acc += pr.weight[i] * pr.weight[j] * a * kernel(r) * std::pow(std::fabs(Du), p);
      }
    double frc = 0.0;
    for (std::size_t i = 0; i < pr.size(); ++i)
      for (int ax = 0; ax < d; ++ax)
        frc += pr.weight[i] * pr.forcing[i * d + ax] * u[i * d + ax];
    return acc / p - frc;
  }

  std::vector<double> full_gradient(const NonlocalProblem& pr,
                                    const std::vector<double>& u) const {
    std::vector<double> g(pr.size() * d, 0.0);
    for (std::size_t i = 0; i < pr.size(); ++i)
      for (std::size_t j = 0; j < pr.size(); ++j) {
        if (i == j) continue;
        const double* xi = pr.coords.data() + i * d;
        const double* xj = pr.coords.data() + j * d;
        double rr = 0.0;
        for (int ax = 0; ax < d; ++ax) rr += (xi[ax] - xj[ax]) * (xi[ax] - xj[ax]);
        const double r = std::sqrt(rr);
        double Du = 0.0;
        for (int ax = 0; ax < d; ++ax)
          Du += (u[i * d + ax] - u[j * d + ax]) * (xi[ax] - xj[ax]) / r;
        const double a = 0.5 * (point_factor(xi) + point_factor(xj));
        const double coef = 2.0 * pr.weight[i] * pr.weight[j] * a * kernel(r) *
                            std::pow(std::fabs(Du), p - 2.0) * Du;
        for (int ax = 0; ax < d; ++ax) g[i * d + ax] += coef * (xi[ax] - xj[ax]) / r;
      }
    for (std::size_t i = 0; i < pr.size(); ++i)
      for (int ax = 0; ax < d; ++ax)
        g[i * d + ax] -= pr.weight[i] * pr.forcing[i * d + ax];
    for (std::size_t i = 0; i < pr.size(); ++i)
      if (pr.collar[i])
        for (int ax = 0; ax < d; ++ax) g[i * d + ax] = 0.0;
    return g;
  }
};

NonlocalProblem box49(double p, double s, const CoeffSpec& coeff) {
  GridSpec g{2, 16, 40.0};
  LatticeDomain dom;
  dom.halfwidth = 8.0;
  dom.collar_width = 1.25;
  NonlocalProblem pr = make_lattice_problem(g, dom, FracParams{s, p, 0.0}, coeff);
  set_forcing_bump(pr, {0.5, 0.3, 0.0}, 2.0, 6.5, {0.9, -0.4, 0.0});
  return pr;
}

std::size_t find_node(const NonlocalProblem& pr, double x0, double x1) {
  for (std::size_t i = 0; i < pr.size(); ++i)
    if (std::fabs(pr.coords[i * pr.d] - x0) < 1e-9 &&
        std::fabs(pr.coords[i * pr.d + 1] - x1) < 1e-9)
      return i;
  REQUIRE(false);
  return 0;
}

}  // namespace

TEST_CASE("coefficient factors alternate by cell parity and pairs average endpoints") {
  CoeffSpec cb;
  cb.kind = CoeffSpec::Kind::checkerboard;
  cb.cell = 2.0;
  cb.low = 1.0;
  cb.high = 3.0;

  const double a0[2] = {0.3, 0.4};   // cell (0,0), even
  const double a1[2] = {2.3, 0.4};   // cell (1,0), odd
  const double a2[2] = {2.3, 2.4};   // cell (1,1), even
  const double a3[2] = {-0.7, 0.4};  // cell (-1,0), odd
  CHECK(coeff_eval(cb, 2, a0, a0) == 1.0);
  CHECK(coeff_eval(cb, 2, a1, a1) == 3.0);
  CHECK(coeff_eval(cb, 2, a2, a2) == 1.0);
  CHECK(coeff_eval(cb, 2, a3, a3) == 3.0);
  CHECK(coeff_eval(cb, 2, a0, a1) == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(coeff_eval(cb, 2, a0, a1) == coeff_eval(cb, 2, a1, a0));
  CHECK(coeff_lower_bound(cb) == 1.0);
  CHECK(coeff_upper_bound(cb) == 3.0);
  for (const double* x : {a0, a1, a2, a3})
    for (const double* y : {a0, a1, a2, a3}) {
      const double v = coeff_eval(cb, 2, x, y);
      CHECK(v >= coeff_lower_bound(cb));
      CHECK(v <= coeff_upper_bound(cb));
    }

  CoeffSpec cc;
  cc.value = 1.7;
  CHECK(coeff_eval(cc, 2, a0, a3) == 1.7);
  CHECK(coeff_lower_bound(cc) == 1.7);
  CHECK(coeff_upper_bound(cc) == 1.7);
}

TEST_CASE("nearest-neighbor kernel value equals the quadratured shell average") {
  struct Case {
    int d, N;
    double s, p;
  };
  for (const Case& cs : {Case{2, 16, 0.5, 2.0}, Case{2, 16, 0.4, 3.0},
                         Case{3, 8, 0.6, 2.0}}) {
    GridSpec g{cs.d, cs.N, 40.0};
    NonlocalProblem pr =
        make_torus_problem(g, FracParams{cs.s, cs.p, 0.0}, CoeffSpec{});
    const double h = g.h();

    // Independent quadrature of the radial averages over the shell.
    std::vector<double> nodes(64), weights(64);
    special::gauss_legendre(64, 0.5 * h, 1.5 * h, nodes.data(), weights.data());
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      num += weights[k] * std::pow(nodes[k], -(cs.d + cs.s * cs.p)) *
             std::pow(nodes[k], cs.d - 1.0);
      den += weights[k] * std::pow(nodes[k], cs.d - 1.0);
    }
    CHECK(rel_diff(pair_kernel_weight(pr, h), num / den) < 1e-12);

    // Off the shell the raw power applies.
    CHECK(rel_diff(pair_kernel_weight(pr, 2.0 * h),
                   std::pow(2.0 * h, -(cs.d + cs.s * cs.p))) < 1e-15);
    CHECK_THROWS(pair_kernel_weight(pr, 0.0));
  }
}

TEST_CASE("projected differences: identity, skew, and coincidence") {
  const double xi[2] = {1.0, 2.0};
  const double xj[2] = {-0.5, 0.7};
  const double r = std::hypot(xi[0] - xj[0], xi[1] - xj[1]);

  // Identity displacement projects to the full separation.
  CHECK(rel_diff(projected_difference(xi, xj, xi, xj, 2), r) < 1e-14);

  // A quarter-turn spin is orthogonal to every separation.
  const double si[2] = {xi[1], -xi[0]};
  const double sj[2] = {xj[1], -xj[0]};
  CHECK(std::fabs(projected_difference(si, sj, xi, xj, 2)) < 1e-14);

  const double ui[2] = {0.3, -1.1};
  const double uj[2] = {0.9, 0.2};
  const double expect =
      ((ui[0] - uj[0]) * (xi[0] - xj[0]) + (ui[1] - uj[1]) * (xi[1] - xj[1])) / r;
  CHECK(rel_diff(projected_difference(ui, uj, xi, xj, 2), expect) < 1e-14);
  // Swapping both arguments flips both factors, leaving the value alone.
  CHECK(projected_difference(ui, uj, xi, xj, 2) ==
        projected_difference(uj, ui, xj, xi, 2));

  CHECK_THROWS(projected_difference(ui, uj, xi, xi, 2));
}

TEST_CASE("tiny lattice assembly matches a from-scratch reference") {
  GridSpec g{2, 8, 40.0};
  LatticeDomain dom;
  dom.halfwidth = 5.1;
  dom.collar_width = 2.0;
  CoeffSpec cb;
  cb.kind = CoeffSpec::Kind::checkerboard;
  cb.cell = 4.0;
  cb.low = 1.0;
  cb.high = 2.5;
  NonlocalProblem pr = make_lattice_problem(g, dom, FracParams{0.45, 3.0, 0.0}, cb);
  REQUIRE(pr.size() == 9);
  std::size_t pinned = 0;
  for (auto c : pr.collar) pinned += c;
  CHECK(pinned == 8);
  set_forcing_bump(pr, {0.5, 0.0, 0.0}, 2.0, 6.0, {0.7, -0.3, 0.0});

  RefAssembly ref{2, 0.45, 3.0, pr.h_singular, cb};
  const std::vector<double> u = random_vector(pr.size() * 2, 11, 0.8);
  const std::vector<double> v = random_vector(pr.size() * 2, 12, 0.8);

  CHECK(rel_diff(apply_operator(pr, u, v), ref.pairing(pr, u, v)) < 1e-14);
  CHECK(rel_diff(energy(pr, u), ref.energy_value(pr, u)) < 1e-14);

  // Swapping the roles of the two summation variables relabels the ordered
  // pairs, so the double sum is unchanged.
  double swapped = 0.0;
  for (std::size_t j = 0; j < pr.size(); ++j)
    for (std::size_t i = 0; i < pr.size(); ++i) {
      if (i == j) continue;
      const double* xi = pr.coords.data() + i * 2;
      const double* xj = pr.coords.data() + j * 2;
      const double r = std::hypot(xi[0] - xj[0], xi[1] - xj[1]);
      const double Du = projected_difference(u.data() + i * 2, u.data() + j * 2,
                                             xi, xj, 2);
      const double Dv = projected_difference(v.data() + i * 2, v.data() + j * 2,
                                             xi, xj, 2);
      swapped += pr.weight[i] * pr.weight[j] * 0.5 *
                 (ref.point_factor(xi) + ref.point_factor(xj)) * ref.kernel(r) *
                 std::fabs(Du) * Du * Dv;
    }
  CHECK(rel_diff(apply_operator(pr, u, v), swapped) < 1e-14);

  const std::vector<double> gref = ref.full_gradient(pr, u);
  const std::vector<double> got = gradient(pr, u);
  for (std::size_t k = 0; k < gref.size(); ++k)
    CHECK(std::fabs(got[k] - gref[k]) <= 1e-14 * std::max(1.0, std::fabs(gref[k])));

  double fref = 0.0;
  for (std::size_t i = 0; i < pr.size(); ++i)
    for (int c = 0; c < 2; ++c)
      fref += pr.weight[i] * pr.forcing[i * 2 + c] * v[i * 2 + c];
  CHECK(rel_diff(forcing_pairing(pr, v), fref) < 1e-14);
}

TEST_CASE("pair gradient is the Riesz vector of the operator pairing") {
  for (double p : {2.0, 2.5, 3.0}) {
    NonlocalProblem pr = box49(p, 0.5, CoeffSpec{});
    const std::vector<double> u = random_vector(pr.size() * 2, 21, 1.0);
    const std::vector<double> v = random_vector(pr.size() * 2, 22, 1.0);
    const std::vector<double> gp = pair_gradient(pr, u);
    CHECK(rel_diff(dot(gp, v), apply_operator(pr, u, v)) < 1e-12);
  }
}

TEST_CASE("p = 2 pairing is symmetric and the energy is its half") {
  CoeffSpec cb;
  cb.kind = CoeffSpec::Kind::checkerboard;
  cb.cell = 3.0;
  cb.low = 1.0;
  cb.high = 4.0;
  NonlocalProblem pr = box49(2.0, 0.55, cb);
  const std::vector<double> u = random_vector(pr.size() * 2, 31, 1.0);
  const std::vector<double> v = random_vector(pr.size() * 2, 32, 1.0);
  CHECK(rel_diff(apply_operator(pr, u, v), apply_operator(pr, v, u)) < 1e-12);
  CHECK(rel_diff(energy(pr, u),
                 0.5 * apply_operator(pr, u, u) - forcing_pairing(pr, u)) < 1e-12);
}

TEST_CASE("energy differences match the pairing to second order") {
  NonlocalProblem pr = box49(3.0, 0.45, CoeffSpec{});
  const std::vector<double> u = random_vector(pr.size() * 2, 41, 0.7);
  const std::vector<double> phi = random_vector(pr.size() * 2, 42, 0.7);
  const double expect = apply_operator(pr, u, phi) - forcing_pairing(pr, phi);

  const auto central = [&](double delta) {
    std::vector<double> up(u), um(u);
    for (std::size_t k = 0; k < u.size(); ++k) {
      up[k] += delta * phi[k];
      um[k] -= delta * phi[k];
    }
    return (energy(pr, up) - energy(pr, um)) / (2.0 * delta);
  };
  CHECK(rel_diff(central(1e-5), expect) < 1e-4);

  // Central differences converge at second order: halving the step should
  // cut the error by about four.
  const double e1 = std::fabs(central(2e-3) - expect);
  const double e2 = std::fabs(central(1e-3) - expect);
  const double slope = std::log(e1 / e2) / std::log(2.0);
  CHECK(std::fabs(slope - 2.0) < 0.3);
}

TEST_CASE("interior pairs ignore an added rigid motion") {
  NonlocalProblem pr = box49(3.0, 0.5, CoeffSpec{});
  const std::vector<double> u = random_vector(pr.size() * 2, 71, 0.6);

  // Window region: the ball of radius 4 about the origin. The added field is
  // skew-affine there and arbitrary elsewhere; pairs with both endpoints in
  // the region keep |D| exactly.
  std::vector<double> shifted = u;
  std::vector<std::uint8_t> inside(pr.size(), 0);
  for (std::size_t i = 0; i < pr.size(); ++i) {
    const double x = pr.coords[i * 2], y = pr.coords[i * 2 + 1];
    if (x * x + y * y <= 16.0) {
      inside[i] = 1;
      shifted[i * 2] += 0.8 * y;
      shifted[i * 2 + 1] -= 0.8 * x;
    } else {
      shifted[i * 2] += 0.3;
      shifted[i * 2 + 1] -= 0.9;
    }
  }

  RefAssembly ref{2, 0.5, 3.0, pr.h_singular, CoeffSpec{}};
  const auto interior_energy = [&](const std::vector<double>& w) {
    double acc = 0.0;
    for (std::size_t i = 0; i < pr.size(); ++i)
      for (std::size_t j = 0; j < pr.size(); ++j) {
        if (i == j || !inside[i] || !inside[j]) continue;
        const double* xi = pr.coords.data() + i * 2;
        const double* xj = pr.coords.data() + j * 2;
        const double r = std::hypot(xi[0] - xj[0], xi[1] - xj[1]);
        const double D = projected_difference(w.data() + i * 2, w.data() + j * 2,
                                              xi, xj, 2);
        acc += pr.weight[i] * pr.weight[j] * ref.kernel(r) * std::pow(std::fabs(D), 3.0);
      }
    return acc;
  };
  const double base = interior_energy(u);
  CHECK(std::fabs(interior_energy(shifted) - base) < 1e-10 * std::max(1.0, base));
}

TEST_CASE("operator monotonicity on random pairs") {
  NonlocalProblem pr = box49(3.0, 0.5, CoeffSpec{});
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    const std::vector<double> u = random_vector(pr.size() * 2, 100 + seed, 1.0);
    const std::vector<double> v = random_vector(pr.size() * 2, 200 + seed, 1.0);
    std::vector<double> w(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) w[k] = u[k] - v[k];
    const double gap = apply_operator(pr, u, w) - apply_operator(pr, v, w);
    CHECK(gap >= -1e-12 * std::max(1.0, std::fabs(gap)));
  }
}

TEST_CASE("torus pairing at p = 2 equals the lattice-symbol route") {
  struct Case {
    int d, N;
    double s;
  };
  for (const Case& cs : {Case{2, 32, 0.5}, Case{2, 32, 0.3}, Case{3, 16, 0.6}}) {
    GridSpec g{cs.d, cs.N, 40.0};
    CoeffSpec cc;
    cc.value = 1.7;
    NonlocalProblem pr = make_torus_problem(g, FracParams{cs.s, 2.0, 0.0}, cc);

    FamilyParams fam;
    fam.seed = 500 + cs.d;
    fam.kmax = std::min(6, g.N / 2 - 1);
    const VectorField fu = sample_family("bandlimited_random", g, fam);
    fam.seed += 1;
    const VectorField fv = sample_family("bandlimited_random", g, fam);

    const double direct = apply_operator(pr, restrict_from_grid(pr, fu),
                                         restrict_from_grid(pr, fv));
    const double spectral =
        cc.value *
        pairing_p2_lattice(fu, fv, [&](double r) { return pair_kernel_weight(pr, r); });
    CHECK(rel_diff(direct, spectral) < 1e-10);
  }
}

TEST_CASE("pair gradient is the exact adjoint on full-torus node sets") {
  // A full torus contains pairs whose axis displacement is exactly half a
  // period, where the min-image direction is the same for both orderings.
  for (double s : {0.4, 0.52}) {
    GridSpec g{2, 16, 40.0};
    CoeffSpec cc;
    cc.value = 1.0;
    NonlocalProblem pr = make_torus_problem(g, FracParams{s, 2.0, 0.0}, cc);
    const std::vector<double> u = random_vector(pr.size() * 2, 71, 1.0);
    const std::vector<double> v = random_vector(pr.size() * 2, 72, 1.0);
    const std::vector<double> gu = pair_gradient(pr, u);
    double dot = 0.0;
    for (std::size_t k = 0; k < gu.size(); ++k) dot += gu[k] * v[k];
    CHECK(rel_diff(dot, apply_operator(pr, u, v)) < 1e-13);
  }
}

TEST_CASE("file-born geometry reproduces the lattice fast path") {
  CoeffSpec cb;
  cb.kind = CoeffSpec::Kind::checkerboard;
  cb.cell = 2.5;
  cb.low = 1.0;
  cb.high = 3.0;
  NonlocalProblem pr = box49(2.5, 0.5, cb);

  NonlocalProblem flat = pr;
  flat.grid_flat.clear();
  flat.lattice_idx.clear();
  finalize_problem(flat);
  REQUIRE(!flat.lattice_born());

  const std::vector<double> u = random_vector(pr.size() * 2, 51, 1.0);
  const std::vector<double> v = random_vector(pr.size() * 2, 52, 1.0);
  CHECK(rel_diff(apply_operator(pr, u, v), apply_operator(flat, u, v)) < 1e-10);
  CHECK(rel_diff(energy(pr, u), energy(flat, u)) < 1e-10);
  const std::vector<double> ga = gradient(pr, u);
  const std::vector<double> gb = gradient(flat, u);
  for (std::size_t k = 0; k < ga.size(); ++k)
    CHECK(std::fabs(ga[k] - gb[k]) <= 1e-10 * std::max(1.0, std::fabs(gb[k])));
}

TEST_CASE("zero forcing minimizes at zero") {
  NonlocalProblem pr = box49(3.0, 0.5, CoeffSpec{});
  pr.forcing.assign(pr.forcing.size(), 0.0);
  const SolveResult res = solve_descent(pr);
  CHECK(res.converged);
  CHECK(res.iterations == 0);
  CHECK(res.energy_trace.size() == 1);
  for (double x : res.solution) CHECK(x == 0.0);
}

TEST_CASE("descent reproduces the dense solution at p = 2") {
  CoeffSpec cb;
  cb.kind = CoeffSpec::Kind::checkerboard;
  cb.cell = 3.0;
  cb.low = 1.0;
  cb.high = 2.0;
  NonlocalProblem pr = box49(2.0, 0.5, cb);

  const SolveResult dense = solve_dense_p2(pr);
  CHECK(dense.converged);
  CHECK(dense.grad_norm < 1e-10);
  REQUIRE(dense.energy_trace.size() == 2);
  CHECK(dense.energy_trace[1] < dense.energy_trace[0]);

  SolveOptions opt;
  opt.tol = 1e-7;
  opt.max_iter = 20000;
  const SolveResult it = solve_descent(pr, opt);
  CHECK(it.converged);
  CHECK(!it.line_search_failed);
  CHECK(vec_rel_l2(it.solution, dense.solution) < 1e-7);
  for (std::size_t k = 1; k < it.energy_trace.size(); ++k)
    CHECK(it.energy_trace[k] <= it.energy_trace[k - 1]);
  for (std::size_t i = 0; i < pr.size(); ++i)
    if (pr.collar[i]) {
      CHECK(it.solution[i * 2] == 0.0);
      CHECK(it.solution[i * 2 + 1] == 0.0);
    }
}

TEST_CASE("solutions scale with the data and the coefficient") {
  // Doubling a constant coefficient halves the p = 2 solution.
  NonlocalProblem pr = box49(2.0, 0.5, CoeffSpec{});
  CoeffSpec twice;
  twice.value = 2.0;
  NonlocalProblem pr2 = box49(2.0, 0.5, twice);
  const SolveResult a = solve_dense_p2(pr);
  const SolveResult b = solve_dense_p2(pr2);
  for (std::size_t k = 0; k < a.solution.size(); ++k)
    CHECK(std::fabs(b.solution[k] - 0.5 * a.solution[k]) <=
          1e-10 * std::max(1.0, std::fabs(a.solution[k])));

  // Scaling the forcing by 4 doubles the p = 3 solution: the pair term is
  // homogeneous of degree p - 1 = 2 in the state.
  GridSpec g{2, 8, 40.0};
  LatticeDomain dom;
  dom.halfwidth = 5.1;
  dom.collar_width = 2.0;
  NonlocalProblem small = make_lattice_problem(g, dom, FracParams{0.5, 3.0, 0.0},
                                               CoeffSpec{});
  set_forcing_bump(small, {0.5, 0.0, 0.0}, 2.0, 6.0, {0.7, -0.3, 0.0});
  NonlocalProblem big = small;
  for (double& f : big.forcing) f *= 4.0;

  SolveOptions opt;
  opt.tol = 1e-12;
  opt.max_iter = 20000;
  const SolveResult us = solve_descent(small, opt);
  const SolveResult ub = solve_descent(big, opt);
  CHECK(us.converged);
  CHECK(ub.converged);
  CHECK(vec_rel_l2(ub.solution, [&] {
          std::vector<double> twice_u = us.solution;
          for (double& x : twice_u) x *= 2.0;
          return twice_u;
        }()) < 1e-5);
}

TEST_CASE("warm starts skip the work") {
  NonlocalProblem pr = box49(2.0, 0.5, CoeffSpec{});
  const SolveResult dense = solve_dense_p2(pr);
  SolveOptions opt;
  opt.tol = 1e-6;
  opt.warm = dense.solution;
  const SolveResult res = solve_descent(pr, opt);
  CHECK(res.converged);
  CHECK(res.iterations == 0);
}

TEST_CASE("prolongation carries a coarse solution to a finer lattice") {
  GridSpec gc{2, 16, 40.0};
  GridSpec gf{2, 32, 40.0};
  LatticeDomain dom;
  dom.halfwidth = 8.0;
  dom.collar_width = 1.3;
  const FracParams fp{0.5, 2.0, 0.0};
  NonlocalProblem coarse = make_lattice_problem(gc, dom, fp, CoeffSpec{});
  NonlocalProblem fine = make_lattice_problem(gf, dom, fp, CoeffSpec{});
  set_forcing_bump(coarse, {0.5, 0.3, 0.0}, 2.0, 6.5, {0.9, -0.4, 0.0});
  set_forcing_bump(fine, {0.5, 0.3, 0.0}, 2.0, 6.5, {0.9, -0.4, 0.0});

  const SolveResult uc = solve_dense_p2(coarse);
  const std::vector<double> up = prolong_solution(coarse, uc.solution, fine);

  for (std::size_t i = 0; i < fine.size(); ++i)
    if (fine.collar[i]) {
      CHECK(up[i * 2] == 0.0);
      CHECK(up[i * 2 + 1] == 0.0);
    }

  // Shared nodes copy exactly when free on both levels.
  const std::size_t ic = find_node(coarse, 0.0, 2.5);
  const std::size_t jf = find_node(fine, 0.0, 2.5);
  REQUIRE(!coarse.collar[ic]);
  REQUIRE(!fine.collar[jf]);
  CHECK(std::fabs(up[jf * 2] - uc.solution[ic * 2]) < 1e-12);
  CHECK(std::fabs(up[jf * 2 + 1] - uc.solution[ic * 2 + 1]) < 1e-12);

  // The carried iterate already beats the zero start and warm-started
  // descent only improves it.
  const double e_up = energy(fine, up);
  CHECK(e_up < 0.0);
  SolveOptions opt;
  opt.tol = 1e-7;
  opt.max_iter = 20000;
  opt.warm = up;
  const SolveResult uf = solve_descent(fine, opt);
  CHECK(uf.converged);
  CHECK(uf.energy_trace.front() <= e_up + 1e-12);
  CHECK(uf.energy_trace.back() <= e_up + 1e-12);
}

TEST_CASE("csv and json round trips") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "korn_nonlocal_io";
  fs::create_directories(dir);

  const fs::path csv = dir / "problem.csv";
  {
    std::ofstream out(csv);
    out << "# x0, x1, weight, collar, f0, f1\n";
    out << "0.0, 0.0, 1.0, 0, 0.4, -0.2\n";
    out << "1.0, 0.0, 1.0, 1, 0.0, 0.0\n";
    out << "0.0, 1.5, 1.0, 1, 0.0, 0.0\n";
    out << "-1.0, 0.2, 1.0, 1, 0.0, 0.0\n";
    out << "0.3, -1.2, 1.0, 1, 0.0, 0.0\n";
  }
  NonlocalProblem pr = read_problem_csv(csv.string(), 2, FracParams{0.5, 2.0, 0.0},
                                        CoeffSpec{});
  REQUIRE(pr.size() == 5);
  CHECK(!pr.lattice_born());
  CHECK(pr.coords[2] == 1.0);
  CHECK(pr.collar[0] == 0);
  CHECK(pr.collar[1] == 1);
  CHECK(pr.forcing[0] == 0.4);
  // Closest pair is (1,0) against (0.3,-1.2)? Verify against a direct scan.
  double min_r = 1e30;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = i + 1; j < 5; ++j)
      min_r = std::min(min_r, std::hypot(pr.coords[i * 2] - pr.coords[j * 2],
                                         pr.coords[i * 2 + 1] - pr.coords[j * 2 + 1]));
  CHECK(rel_diff(pr.h_singular, min_r) < 1e-15);

  const SolveResult res = solve_dense_p2(pr);
  CHECK(res.converged);
  CHECK(res.grad_norm < 1e-12);

  const fs::path sol = dir / "solution.csv";
  write_solution_csv(pr, res.solution, sol.string());
  std::ifstream chk(sol);
  std::string line;
  std::size_t lines = 0;
  bool header = false;
  while (std::getline(chk, line)) {
    if (lines == 0) header = line.rfind('#', 0) == 0;
    ++lines;
  }
  CHECK(header);
  CHECK(lines == 6);

  const fs::path rep = dir / "report.json";
  write_solve_report_json(res, rep.string());
  std::ifstream jin(rep);
  nlohmann::json j;
  jin >> j;
  CHECK(j["converged"].get<bool>() == res.converged);
  CHECK(j["iterations"].get<int>() == res.iterations);
  CHECK(j["energy_trace"].size() == res.energy_trace.size());
  CHECK(j["grad_norm"].get<double>() == doctest::Approx(res.grad_norm));

  const fs::path bad = dir / "bad.csv";
  {
    std::ofstream out(bad);
    out << "0.0, 0.0, 1.0\n";
  }
  CHECK_THROWS(read_problem_csv(bad.string(), 2, FracParams{0.5, 2.0, 0.0},
                                CoeffSpec{}));
  CHECK_THROWS(read_problem_csv((dir / "missing.csv").string(), 2,
                                FracParams{0.5, 2.0, 0.0}, CoeffSpec{}));
}

TEST_CASE("torus problems refuse to solve") {
  GridSpec g{2, 8, 40.0};
  NonlocalProblem pr = make_torus_problem(g, FracParams{0.5, 2.0, 0.0}, CoeffSpec{});
  CHECK_THROWS(solve_descent(pr));
  CHECK_THROWS(solve_dense_p2(pr));
}

TEST_CASE("disc problems pick the nearest nodes deterministically") {
  GridSpec g{2, 32, 40.0};
  const std::array<double, 3> center{0.3, -0.2, 0.0};
  NonlocalProblem a = make_disc_problem(g, center, 100, 2.0,
                                        FracParams{0.5, 2.0, 0.0}, CoeffSpec{});
  NonlocalProblem b = make_disc_problem(g, center, 100, 2.0,
                                        FracParams{0.5, 2.0, 0.0}, CoeffSpec{});
  REQUIRE(a.size() == 100);
  CHECK(a.grid_flat == b.grid_flat);

  double rmax = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    rmax = std::max(rmax, std::hypot(a.coords[i * 2] - center[0],
                                     a.coords[i * 2 + 1] - center[1]));
  std::size_t free_cnt = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double r = std::hypot(a.coords[i * 2] - center[0],
                                a.coords[i * 2 + 1] - center[1]);
    const bool in_ring = (rmax - r) <= 2.0 * (1.0 + 1e-12);
    CHECK(static_cast<bool>(a.collar[i]) == in_ring);
    free_cnt += a.collar[i] ? 0 : 1;
  }
  CHECK(free_cnt > 0);

  set_forcing_bump(a, center, 1.0, 4.0, {1.0, 0.5, 0.0});
  const SolveResult res = solve_dense_p2(a);
  CHECK(res.converged);
  CHECK(res.grad_norm < 1e-10);
}

TEST_CASE("lattice domain geometry at the production resolution") {
  GridSpec g{2, 64, 40.0};
  LatticeDomain dom;
  NonlocalProblem pr = make_lattice_problem(g, dom, FracParams{0.5, 2.0, 0.0},
                                            CoeffSpec{});
  CHECK(pr.size() == 625);  // 25 nodes per axis inside |x| <= 8
  std::size_t pinned = 0;
  for (auto c : pr.collar) pinned += c;
  CHECK(pinned == 625 - 441);  // two pinned rings at h = 0.625
  for (double w : pr.weight) CHECK(w == doctest::Approx(0.625 * 0.625).epsilon(1e-15));
  CHECK(std::is_sorted(pr.grid_flat.begin(), pr.grid_flat.end()));

  // Nearest-neighbor table entries carry the shell average; the diagonal
  // carries the raw power.
  const double h = g.h();
  int off10[2] = {1, 0};
  int off11[2] = {1, 1};
  CHECK(pr.kernel_table[g.flat_index(off10)] ==
        doctest::Approx(pair_kernel_weight(pr, h)).epsilon(1e-15));
  const double rdiag = std::sqrt(h * h + h * h);
  CHECK(pr.kernel_table[g.flat_index(off11)] ==
        doctest::Approx(std::pow(rdiag, -(2.0 + 1.0))).epsilon(1e-13));
}

TEST_CASE("self-improvement rows are finite and eps validation bites") {
  GridSpec g{2, 32, 40.0};
  LatticeDomain dom;
  dom.halfwidth = 8.0;
  dom.collar_width = 2.6;
  NonlocalProblem pr = make_lattice_problem(g, dom, FracParams{0.5, 2.0, 0.0},
                                            CoeffSpec{});
  set_forcing_bump(pr, {1.0, 0.5, 0.0}, 1.5, 4.0, {1.0, 0.3, 0.0});
  const SolveResult res = solve_dense_p2(pr);
  REQUIRE(res.converged);

  SupportBox box;
  box.halfwidth = 10.0;
  DualProbeDictionary probes(g, box, 99);
  const std::vector<double> eps{0.05, 0.1};
  const std::vector<SelfImprovementRow> rows =
      measure_self_improvement(pr, res.solution, eps, 4.0, 6.5, probes, 32);
  REQUIRE(rows.size() == 2);
  for (const SelfImprovementRow& row : rows) {
    CHECK(std::isfinite(row.lhs));
    CHECK(row.lhs > 0.0);
    CHECK(std::isfinite(row.dual));
    CHECK(row.dual > 0.0);
    CHECK(row.xnorm > 0.0);
    CHECK(std::isfinite(row.ratio));
    CHECK(row.ratio > 0.0);
  }

  CHECK_THROWS(measure_self_improvement(pr, res.solution, {0.6}, 4.0, 6.5,
                                        probes, 32));
  CHECK_THROWS(measure_self_improvement(pr, res.solution, eps, 6.5, 4.0,
                                        probes, 32));
}
