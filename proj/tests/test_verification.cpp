/// @file
/// Campaign harness: determinism of the CSV evidence, parameter validation,
/// and the pass/fail behavior of each check on small grids. Expected values
/// that admit a closed form (critical exponent, eigenvalue bracket, exact
/// transfer at zero gain) are recomputed here by hand.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "korn/fields.hpp"
#include "korn/nonlocal.hpp"
#include "korn/seminorms.hpp"
#include "korn/spectral_ops.hpp"
#include "korn/verification.hpp"

using namespace korn;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  REQUIRE(is.good());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("campaign rejects unknown ids and accepts an empty plan") {
  CampaignSpec spec;
  spec.grid = CheckGrid{2, 16, 40.0};
  CHECK(run_campaign(spec).empty());

  CampaignCheckSpec bogus;
  bogus.id = "no_such_check";
  spec.checks.push_back(bogus);
  CHECK_THROWS_AS(run_campaign(spec), std::invalid_argument);
}

TEST_CASE("campaign ids cover every registered check") {
  const std::vector<std::string> ids = campaign_check_ids();
  CHECK(ids.size() == 14);
  const CampaignSpec full = default_campaign(3, false);
  const CampaignSpec quick = default_campaign(3, true);
  REQUIRE(full.checks.size() == ids.size());
  REQUIRE(quick.checks.size() == ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    CHECK(full.checks[i].id == ids[i]);
    CHECK(quick.checks[i].id == ids[i]);
  }
  CHECK(full.grid.N == 128);
  CHECK(quick.grid.N == 64);
}

TEST_CASE("rerunning a campaign writes byte-identical CSV") {
  CampaignSpec spec;
  spec.seed = 42;
  spec.grid = CheckGrid{2, 32, 40.0};
  for (const char* id :
       {"symbol_algebra", "null_space", "kernel_mass", "poincare_korn"}) {
    CampaignCheckSpec c;
    c.id = id;
    if (c.id == "symbol_algebra") c.num["n_xi"] = 40;
    if (c.id == "poincare_korn") c.num["n_fields"] = 2;
    spec.checks.push_back(c);
  }
  const std::vector<CheckReport> first = run_campaign(spec);
  const std::vector<CheckReport> second = run_campaign(spec);
  REQUIRE(first.size() == 4);
  const std::string pa = temp_path("verification_rerun_a.csv");
  const std::string pb = temp_path("verification_rerun_b.csv");
  write_reports_csv(first, pa);
  write_reports_csv(second, pb);
  CHECK(slurp(pa) == slurp(pb));
  std::remove(pa.c_str());
  std::remove(pb.c_str());
}

TEST_CASE("csv schema is stable and quotes the constants blob") {
  CheckReport r;
  r.check_id = "fake";
  r.seed = 7;
  r.d = 2;
  r.N = 16;
  r.L = 40.0;
  r.s = 0.5;
  r.p = 2.0;
  r.eps = 0.0;
  r.residual = 0.25;
  r.threshold = 1.0;
  r.passed = true;
  r.runtime_ms = 123.0;  // must not appear: the column is pinned to zero
  r.constants["alpha"] = 1.5;
  const std::string path = temp_path("verification_schema.csv");
  write_reports_csv({r}, path);
  const std::string text = slurp(path);
  std::remove(path.c_str());
  CHECK(text ==
        "check_id,seed,d,N,L,s,p,eps,residual,threshold,passed,constants_json,"
        "runtime_ms\n"
        "fake,7,2,16,40,0.5,2,0,0.25,1,1,\"{\"\"alpha\"\":1.5}\",0\n");
  const std::string summary = reports_summary({r});
  CHECK(summary.find("[PASS] fake") != std::string::npos);
  CHECK(summary.find("1/1 checks passed") != std::string::npos);
}

TEST_CASE("symbol algebra holds to rounding in both dimensions") {
  for (int d : {2, 3}) {
    const CheckReport r = check_symbol_algebra(CheckGrid{d, 16, 40.0}, 150, 5);
    CHECK(r.passed);
    CHECK(r.residual < 1e-12);
    CHECK(r.threshold == 1e-12);
  }
}

TEST_CASE("kernel mass check meets both gap targets") {
  const CheckReport r = check_kernel_mass(CheckGrid{2, 128, 40.0}, 1.0);
  CHECK(r.passed);
  CHECK(r.constants.at("scalar_gap") < 1e-3);
  CHECK(r.constants.at("matrix_gap") < 5e-3);
  CHECK_THROWS_AS(check_kernel_mass(CheckGrid{2, 32, 40.0}, 0.0),
                  std::invalid_argument);
}

TEST_CASE("sampled kernel transform matches the symbol on the low ball") {
  const CheckReport r = check_kernel_symbol_match(CheckGrid{2, 128, 40.0}, 1.0);
  CHECK(r.passed);
  CHECK(r.constants.at("worst_rel_frobenius") < 1e-2);
  CHECK(r.constants.at("freq_cutoff") == doctest::Approx(128.0 / 160.0));
}

TEST_CASE("riesz and extension identities hold on a bandlimited family") {
  const CheckReport r = check_riesz_identities(CheckGrid{2, 32, 40.0}, 2, 2, 11);
  CHECK(r.passed);
  CHECK(r.residual < 1e-10);
}

TEST_CASE("embedding check computes the critical exponent") {
  // d p / (d - s p) at d = 2, s = 1/2, p = 2 is exactly 4.
  const CheckReport r = check_sobolev_embedding(CheckGrid{2, 32, 40.0},
                                                FracParams{0.5, 2.0, 0.0}, 3, 9);
  CHECK(r.constants.at("p_star") == doctest::Approx(4.0).epsilon(1e-14));
  CHECK(r.passed);
  // s p = d has no finite critical exponent and must be rejected.
  CHECK_THROWS_AS(check_sobolev_embedding(CheckGrid{2, 32, 40.0},
                                          FracParams{0.5, 4.0, 0.0}, 3, 9),
                  std::invalid_argument);
}

TEST_CASE("poincare check is scale invariant and guards its ball") {
  const CheckReport r = check_poincare_korn(CheckGrid{2, 64, 40.0},
                                            FracParams{0.5, 2.0, 0.0}, 8.0, 3, 13);
  CHECK(r.passed);
  CHECK(r.constants.at("homogeneity_gap") < 1e-10);
  CHECK(r.constants.at("C_hat") > 0.0);
  CHECK_THROWS_AS(check_poincare_korn(CheckGrid{2, 64, 40.0},
                                      FracParams{0.5, 2.0, 0.0}, 30.0, 3, 13),
                  std::invalid_argument);
}

TEST_CASE("null space check separates skew from symmetric affine maps") {
  const CheckReport r =
      check_null_space(CheckGrid{2, 64, 40.0}, FracParams{0.5, 2.0, 0.0}, 3);
  CHECK(r.passed);
  CHECK(r.constants.at("skew_projected") <
        1e-10 * r.constants.at("skew_scale"));
  CHECK(r.constants.at("symmetric_projected") >
        1e-3 * r.constants.at("symmetric_scale"));
}

TEST_CASE("quasi locality bound and decay hold at the fixed probe") {
  const CheckReport r = check_quasi_locality(CheckGrid{2, 64, 40.0}, 0.5, 2.0,
                                             4.0, 21);
  CHECK(r.passed);
  CHECK(r.constants.at("slack") <= 1.1);
  CHECK(r.constants.at("decay_slope") <= 0.8 * r.constants.at("predicted_slope"));
  CHECK_THROWS_AS(check_quasi_locality(CheckGrid{2, 64, 40.0}, 0.5, 2.0, 20.0, 21),
                  std::invalid_argument);
}

TEST_CASE("vanishing source makes both quasi locality sides zero") {
  const GridSpec g = make_grid(2, 40.0, 32);
  const VectorField zero = make_field(g, 1);
  const VectorField lap = fractional_laplacian(zero, 0.5);
  std::vector<std::uint8_t> mask(g.points(), 1);
  CHECK(lp_norm_masked(lap, 2.0, mask) == 0.0);
  CHECK(lp_norm_masked(zero, 2.0, mask) == 0.0);
}

TEST_CASE("extension domination constant is stable across resolutions") {
  const CheckReport r = check_extension_domination(CheckGrid{2, 64, 40.0}, 2.0, 2, 17);
  CHECK(r.passed);
  CHECK(r.constants.at("C_hat") > 0.0);
  CHECK(r.constants.at("drift") < 0.25);
}

TEST_CASE("poisson characterization ratios stay in a stable bracket") {
  const CheckReport r = check_poisson_characterization(
      CheckGrid{2, 64, 40.0}, FracParams{0.5, 2.0, 0.0}, 6, 23);
  CHECK(r.passed);
  CHECK(r.constants.at("c1") > 0.0);
  CHECK(r.constants.at("c1") <= r.constants.at("c2"));
}

TEST_CASE("korn chain check measures finite stable constants at p = 2") {
  const CheckReport r = check_korn_chain(CheckGrid{2, 64, 40.0},
                                         FracParams{0.5, 2.0, 0.0},
                                         "bandlimited_random", 4, 29);
  CHECK(r.passed);
  CHECK(r.constants.at("exact_margin") <= 1e-12);
  CHECK(r.constants.at("K_hat") >= 1.0);
  const double k2 = r.constants.at("K_hat_sq");
  CHECK(k2 >= r.constants.at("eigen_lower") / 1.1);
  CHECK(k2 <= r.constants.at("eigen_upper") * 1.1);
}

TEST_CASE("korn chain degrades gracefully on null-direction inputs") {
  // A windowed skew map and its symmetric comparison are pointwise
  // rotations of one another: magnitude-blind quantities coincide while
  // the direction-sensitive ones drop, with the first link still exact.
  const GridSpec g = make_grid(2, 40.0, 64);
  const FracParams fp{0.5, 2.0, 0.0};
  PairSumOptions opt;
  opt.with_bracket = false;
  const std::vector<double> levels = default_t_levels(g, 48);
  FamilyParams fam;
  fam.seed = 31;
  const VectorField skew = sample_family("windowed_skew_affine", g, fam);
  const VectorField mono = sample_family("windowed_monomial", g, fam);
  const auto ps = pair_seminorms(skew, {fp}, opt);
  const auto pm = pair_seminorms(mono, {fp}, opt);
  const double Xs = ps[0].projected.value;
  const double Ws = ps[0].gagliardo.value;
  const double Ts =
      poisson_char_seminorm(skew, fp, levels, PoissonVariant::scalar).value;
  const double Tm =
      poisson_char_seminorm(skew, fp, levels, PoissonVariant::matrix).value;
  for (double v : {Xs, Ws, Ts, Tm}) {
    CHECK(std::isfinite(v));
    CHECK(v > 0.0);
  }
  CHECK(Xs <= Ws * (1.0 + 1e-12));
  // The null-direction part of the matrix extension vanishes.
  CHECK(std::fabs(Tm / Ts - 1.0) < 1e-8);
  CHECK(Xs < 0.7 * pm[0].projected.value);
  CHECK(std::fabs(Ws / pm[0].gagliardo.value - 1.0) < 1e-12);

  // All-null inputs skip every ratio and the check passes vacuously.
  const CheckReport z = check_korn_chain(CheckGrid{2, 32, 40.0},
                                         FracParams{0.5, 2.0, 0.0}, "zero", 2, 31);
  CHECK(z.passed);
  CHECK(z.constants.at("contributing") == 0.0);
  CHECK(z.constants.at("skipped") > 0.0);
  REQUIRE(!z.notes.empty());
}

TEST_CASE("commutator estimate validates its gain ladder") {
  const CheckGrid g{2, 32, 40.0};
  const FracParams fp{0.5, 2.0, 0.0};
  // Too few points.
  CHECK_THROWS_AS(estimate_commutator(g, fp, {0.08, 0.04}, 3, 1),
                  std::invalid_argument);
  // Not descending.
  CHECK_THROWS_AS(estimate_commutator(g, fp, {0.02, 0.04, 0.08}, 3, 1),
                  std::invalid_argument);
  // Outside the admissible interval: cap is min(1 - s, s / (p - 1)) / 2.
  CHECK_THROWS_AS(estimate_commutator(g, fp, {0.30, 0.04, 0.02}, 3, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(estimate_commutator(g, fp, {0.08, 0.04, 0.02}, 1, 1),
                  std::invalid_argument);
}

TEST_CASE("zero gain with unit transfer has no remainder") {
  // At eps = 0 the two pairings coincide term by term, so the remainder
  // against c = 1 vanishes identically.
  const GridSpec g = make_grid(2, 40.0, 16);
  CoeffSpec unit;
  const NonlocalProblem pr = make_torus_problem(g, FracParams{0.5, 2.0, 0.0}, unit);
  FamilyParams fam;
  fam.seed = 3;
  fam.kmax = 4;
  const VectorField u = sample_family("bandlimited_random", g, fam);
  const VectorField phi = sample_family("gaussian_bump", g, fam);
  const std::vector<double> grad = pair_gradient(pr, restrict_from_grid(pr, u));
  const std::vector<double> probe = restrict_from_grid(pr, phi);
  double a = 0.0, b = 0.0;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    a += grad[i] * probe[i];
    b += grad[i] * probe[i];
  }
  CHECK(a - 1.0 * b == 0.0);
}

TEST_CASE("commutator decay and dual-route agreement at p = 2") {
  const CheckReport r = estimate_commutator(CheckGrid{2, 64, 40.0},
                                            FracParams{0.5, 2.0, 0.0},
                                            {0.08, 0.04, 0.02}, 3, 37);
  CHECK(r.passed);
  CHECK(r.constants.at("slope") >= 0.8);
  CHECK(r.constants.at("two_route_gap") <= 1e-6);
  CHECK(r.constants.at("c_fit_residual") >= 0.0);
  // Descending eps list: estimated prefactors must not increase.
  CHECK(r.constants.at("C_eps_1") <= r.constants.at("C_eps_0") * (1.0 + 1e-9));
  CHECK(r.constants.at("C_eps_2") <= r.constants.at("C_eps_1") * (1.0 + 1e-9));
}

TEST_CASE("solver oracle agrees with the dense route and the raw pair sums") {
  const CheckReport r = check_solver_oracle(CheckGrid{2, 32, 40.0}, 120, 41);
  CHECK(r.passed);
  CHECK(r.constants.at("descent_vs_dense_rel_l2") < 1e-6);
  CHECK(r.constants.at("trace_violation") <= 1e-12);
  CHECK(r.constants.at("reference_energy_gap") <= 1e-14);
  CHECK(r.constants.at("reference_gradient_gap") <= 1e-14);
  CHECK(r.constants.at("tiny_nodes") == 9.0);
}

TEST_CASE("self improvement ratios are finite, positive, and stable") {
  const CheckReport r = check_self_improvement(CheckGrid{2, 64, 40.0}, 2.0, false,
                                               {0.05, 0.1}, 43);
  CHECK(r.passed);
  CHECK(r.constants.at("ratio_min") > 0.0);
  CHECK(r.constants.at("ratio_max") >= r.constants.at("ratio_min"));
  CHECK(r.constants.at("spread") <= 0.25);
}
