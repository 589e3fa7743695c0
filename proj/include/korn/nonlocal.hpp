#pragma once

/// Assembly and variational solution of the coupled nonlocal system on a
/// finite node set: pair quadrature of the weak form, energy descent with
/// a dense linear-algebra crosscheck at p = 2, and measurement of the
/// regularity gain of the computed minimizers.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "korn/fields.hpp"
#include "korn/seminorms.hpp"

namespace korn {

struct CoeffSpec {
  enum class Kind { constant, checkerboard };
  Kind kind = Kind::constant;
  double value = 1.0;  // constant coefficient
  // Checkerboard: axis-aligned cells of the given edge; the pointwise factor
  // alternates between low and high with cell parity, and the pair
  // coefficient is the mean of the two endpoint factors, which keeps it
  // symmetric and inside [low, high].
  double cell = 1.0;
  double low = 1.0;
  double high = 10.0;
};

double coeff_lower_bound(const CoeffSpec& c);
double coeff_upper_bound(const CoeffSpec& c);
double coeff_eval(const CoeffSpec& c, int d, const double* x, const double* y);

/// Quadrature instance of the system: nodes with weights, a pinned collar,
/// a symmetric bounded coefficient, and nodal forcing density. Problems
/// born from a grid keep their lattice indices so pair displacements use
/// exact integer arithmetic (min-image per axis).
struct NonlocalProblem {
  int d = 2;
  FracParams frac;              // p >= 2 enforced by the constructors
  std::vector<double> coords;   // node-major, size() x d
  std::vector<double> weight;   // quadrature weights, > 0
  std::vector<std::uint8_t> collar;
  std::vector<double> forcing;  // density, size() x d
  CoeffSpec coeff;
  // Pairs with separation <= h_singular get the cell-averaged kernel value
  // instead of the raw power, taming the r^{-d-sp} singularity at the
  // closest admissible distance.
  double h_singular = 0.0;

  // Lattice embedding; empty for problems read from files.
  GridSpec grid;
  std::vector<std::size_t> grid_flat;
  std::vector<int> lattice_idx;  // size() x d
  std::array<double, 3> center{0.0, 0.0, 0.0};
  // Pair displacements wrap around the box. Only the torus constructor sets
  // this; bounded clouds measure separations in the plane even when they
  // carry a lattice embedding.
  bool periodic = false;

  // Derived caches, rebuilt by finalize_problem: pointwise coefficient
  // factors, and, when the wrapped min-image geometry is valid (periodic
  // problems, or clouds narrower than half a period per axis), kernel
  // weight and unit-direction tables indexed by the wrapped integer offset.
  std::vector<double> point_factor;
  std::vector<double> kernel_table;
  std::vector<double> dir_table;  // offset-major, d entries per offset

  std::size_t size() const { return weight.size(); }
  bool lattice_born() const { return !grid_flat.empty(); }
};

/// Validates the problem and rebuilds its derived caches. The constructors
/// below call this; call it again after editing nodes, coefficient, or
/// exponents by hand.
void finalize_problem(NonlocalProblem& pr);

/// Radial kernel factor for one pair: the raw power r^{-d-sp}, or its
/// average over the shell [h/2, 3h/2] when r <= h_singular.
double pair_kernel_weight(const NonlocalProblem& pr, double r);

/// (u_i - u_j) . (x_i - x_j) / |x_i - x_j|; throws on coincident nodes.
double projected_difference(const double* ui, const double* uj, const double* xi,
                            const double* xj, int d);

/// Weak-form pairing: ordered-pair quadrature of
/// A |D(u)|^{p-2} D(u) D(v) times the kernel factor.
double apply_operator(const NonlocalProblem& pr, const std::vector<double>& u,
                      const std::vector<double>& v);

/// (1/p) sum of A |D(u)|^p kernel factors minus the forcing pairing.
double energy(const NonlocalProblem& pr, const std::vector<double>& u);

/// Nodal gradient of the pair term alone; apply_operator(u, v) equals the
/// dot product of this with v, which makes pairings against many test
/// fields one quadratic pass plus cheap dots.
std::vector<double> pair_gradient(const NonlocalProblem& pr,
                                  const std::vector<double>& u);

/// Full energy gradient (pair term minus weighted forcing), zeroed on the
/// collar.
std::vector<double> gradient(const NonlocalProblem& pr, const std::vector<double>& u);

double forcing_pairing(const NonlocalProblem& pr, const std::vector<double>& v);

struct SolveOptions {
  double tol = 1e-8;       // Euclidean norm of the free-node gradient
  int max_iter = 4000;
  std::vector<double> warm;  // optional initial iterate, collar re-zeroed
};

struct SolveResult {
  std::vector<double> solution;  // size() x d
  std::vector<double> energy_trace;
  double grad_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  bool line_search_failed = false;
};

/// Backtracking descent with a two-point steplength guess; energy trace is
/// non-increasing by construction. Requires a nonempty collar.
SolveResult solve_descent(const NonlocalProblem& pr, const SolveOptions& opt = {});

/// Direct symmetric solve of the p = 2 stationarity system on the free
/// nodes; independent crosscheck for solve_descent.
SolveResult solve_dense_p2(const NonlocalProblem& pr);

struct LatticeDomain {
  std::array<double, 3> center{0.0, 0.0, 0.0};
  double halfwidth = 8.0;     // axis box |x - center|_inf <= halfwidth
  double collar_width = 1.25; // pinned layer measured inward from the edge
};

/// Grid nodes inside the box, weights h^d, collar where the distance to the
/// box edge is below collar_width.
NonlocalProblem make_lattice_problem(const GridSpec& g, const LatticeDomain& dom,
                                     const FracParams& frac, const CoeffSpec& coeff);

/// The `count` grid nodes nearest the center (deterministic tie-break by
/// flat index); collar where the radius exceeds the enclosing radius minus
/// collar_width.
NonlocalProblem make_disc_problem(const GridSpec& g, const std::array<double, 3>& center,
                                  std::size_t count, double collar_width,
                                  const FracParams& frac, const CoeffSpec& coeff);

/// Every grid node, empty collar; pairings and energies only — solving
/// needs a collar.
NonlocalProblem make_torus_problem(const GridSpec& g, const FracParams& frac,
                                   const CoeffSpec& coeff);

/// Forcing density: radial bump window times constant amplitude vector.
void set_forcing_bump(NonlocalProblem& pr, const std::array<double, 3>& center,
                      double inner, double outer, const std::array<double, 3>& amp);

/// Nodal values placed on the parent grid, zero elsewhere; lattice-born only.
VectorField embed_on_grid(const NonlocalProblem& pr, const std::vector<double>& u);
std::vector<double> restrict_from_grid(const NonlocalProblem& pr, const VectorField& f);

/// Multilinear interpolation of a coarse lattice solution onto the nodes of
/// a finer problem; collar entries come back zero.
std::vector<double> prolong_solution(const NonlocalProblem& coarse,
                                     const std::vector<double>& u_coarse,
                                     const NonlocalProblem& fine);

/// CSV rows: x_0,...,x_{d-1}, weight, collar_flag, f_0,...,f_{d-1}.
/// Lines starting with '#' are skipped.
NonlocalProblem read_problem_csv(const std::string& path, int d,
                                 const FracParams& frac, const CoeffSpec& coeff);
void write_solution_csv(const NonlocalProblem& pr, const std::vector<double>& u,
                        const std::string& path);
void write_solve_report_json(const SolveResult& res, const std::string& path);

struct SelfImprovementRow {
  double eps = 0.0;
  double lhs = 0.0;     // Gagliardo value of the cutoff solution at s + eps
  double dual = 0.0;    // probed dual norm of the forcing at s - eps (p - 1)
  double xnorm = 0.0;   // solid norm of the solution over the domain at s
  double ratio = 0.0;   // lhs / (dual^{1/(p-1)} + xnorm)
};

/// Regularity-gain measurement: for each eps the cutoff solution's
/// higher-order seminorm against the dual data norm plus the base norm.
/// The cutoff is 1 inside eta_ones_radius and 0 outside eta_zero_radius,
/// both measured from the domain center. Lattice-born problems only.
std::vector<SelfImprovementRow> measure_self_improvement(
    const NonlocalProblem& pr, const std::vector<double>& u,
    const std::vector<double>& eps_grid, double eta_ones_radius,
    double eta_zero_radius, DualProbeDictionary& probes, int probe_budget);

}  // namespace korn
