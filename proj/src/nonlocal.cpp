#include "korn/nonlocal.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "korn/common.hpp"
#include "korn/special.hpp"

namespace korn {
namespace {

constexpr double kSingularSlack = 1.0 + 1e-9;

double point_coeff_factor(const CoeffSpec& c, int d, const double* x) {
  if (c.kind == CoeffSpec::Kind::constant) return c.value;
  require(c.cell > 0.0, "checkerboard coefficient: cell must be positive");
  long long parity = 0;
  for (int ax = 0; ax < d; ++ax)
    parity += static_cast<long long>(std::floor(x[ax] / c.cell));
  return ((parity % 2) + 2) % 2 == 0 ? c.low : c.high;
}

inline double magnitude_factor(double v, double p) {  // |v|^{p-2}
  if (p == 2.0) return 1.0;
  if (p == 3.0) return std::fabs(v);
  return std::pow(std::fabs(v), p - 2.0);
}

inline double magnitude_p(double v, double p) {  // |v|^p
  if (p == 2.0) return v * v;
  if (p == 3.0) return v * v * std::fabs(v);
  return std::pow(std::fabs(v), p);
}

// Visits every ordered pair (i, j) with fixed i, handing the callback the
// kernel weight and the unit direction from j toward i. Lattice-born
// problems resolve geometry through the precomputed offset tables with
// per-axis min-image integer arithmetic; file-born problems measure
// Euclidean separations directly.
template <typename F>
inline void pairs_from(const NonlocalProblem& pr, std::size_t i, F&& f) {
  const std::size_t K = pr.size();
  const int d = pr.d;
  if (!pr.kernel_table.empty()) {
    const int N = pr.grid.N;
    const int mask = N - 1;
    const int* li = pr.lattice_idx.data() + i * d;
    for (std::size_t j = 0; j < K; ++j) {
      if (j == i) continue;
      const int* lj = pr.lattice_idx.data() + j * d;
      std::size_t off = 0;
      for (int ax = 0; ax < d; ++ax)
        off = off * static_cast<std::size_t>(N) +
              static_cast<std::size_t>((li[ax] - lj[ax]) & mask);
      f(j, pr.kernel_table[off], pr.dir_table.data() + off * d);
    }
    return;
  }
  const double* xi = pr.coords.data() + i * d;
  double e[3] = {0.0, 0.0, 0.0};
  for (std::size_t j = 0; j < K; ++j) {
    if (j == i) continue;
    const double* xj = pr.coords.data() + j * d;
    double r2 = 0.0;
    for (int ax = 0; ax < d; ++ax) {
      e[ax] = xi[ax] - xj[ax];
      r2 += e[ax] * e[ax];
    }
    require(r2 > 0.0, "nonlocal pair sweep: coincident nodes");
    const double r = std::sqrt(r2);
    const double inv = 1.0 / r;
    for (int ax = 0; ax < d; ++ax) e[ax] *= inv;
    f(j, pair_kernel_weight(pr, r), e);
  }
}

double shell_average_weight(int d, double sp, double h) {
  const double a = 0.5 * h;
  const double b = 1.5 * h;
  const double num = (std::pow(a, -sp) - std::pow(b, -sp)) / sp;
  const double den = (std::pow(b, d) - std::pow(a, d)) / d;
  return num / den;
}

double euclid_norm(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return std::sqrt(acc);
}

void zero_collar_entries(const NonlocalProblem& pr, std::vector<double>& u) {
  for (std::size_t i = 0; i < pr.size(); ++i)
    if (pr.collar[i])
      for (int c = 0; c < pr.d; ++c) u[i * pr.d + c] = 0.0;
}

// Gershgorin row bound on the p = 2 quadratic form; used only to seed the
// descent steplength, so the coefficient is replaced by its upper bound.
double curvature_scale(const NonlocalProblem& pr) {
  const std::size_t K = pr.size();
  const double abar = coeff_upper_bound(pr.coeff);
  std::vector<double> row(K, 0.0);
  parallel_for_chunks(K, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      double acc = 0.0;
      pairs_from(pr, i, [&](std::size_t j, double w, const double*) {
        acc += pr.weight[j] * w;
      });
      row[i] = 4.0 * pr.weight[i] * abar * acc;
    }
  });
  double mx = 0.0;
  for (double r : row) mx = std::max(mx, r);
  return mx;
}

void finalize_lattice_tables(NonlocalProblem& pr) {
  const GridSpec& g = pr.grid;
  const int d = pr.d;
  require(g.d == d, "nonlocal problem: grid dimension mismatch");
  require(pr.lattice_idx.size() == pr.size() * static_cast<std::size_t>(d),
          "nonlocal problem: lattice index size mismatch");
  const double h = g.h();
  pr.kernel_table.assign(g.points(), 0.0);
  pr.dir_table.assign(g.points() * static_cast<std::size_t>(d), 0.0);
  for_each_node(g, [&](std::size_t flat, const int* idx) {
    double z[3] = {0.0, 0.0, 0.0};
    double r2 = 0.0;
    bool origin = true;
    for (int ax = 0; ax < d; ++ax) {
      const int sgn = g.signed_index(idx[ax]);
      origin = origin && sgn == 0;
      z[ax] = sgn * h;
      r2 += z[ax] * z[ax];
    }
    if (origin) return;
    const double r = std::sqrt(r2);
    pr.kernel_table[flat] = pair_kernel_weight(pr, r);
    for (int ax = 0; ax < d; ++ax) pr.dir_table[flat * d + ax] = z[ax] / r;
  });
}

}  // namespace

double coeff_lower_bound(const CoeffSpec& c) {
  return c.kind == CoeffSpec::Kind::constant ? c.value : std::min(c.low, c.high);
}

double coeff_upper_bound(const CoeffSpec& c) {
  return c.kind == CoeffSpec::Kind::constant ? c.value : std::max(c.low, c.high);
}

double coeff_eval(const CoeffSpec& c, int d, const double* x, const double* y) {
  return 0.5 * (point_coeff_factor(c, d, x) + point_coeff_factor(c, d, y));
}

void finalize_problem(NonlocalProblem& pr) {
  const std::size_t K = pr.size();
  require(pr.d >= 1 && pr.d <= 3, "nonlocal problem: d must be 1..3");
  validate_frac(pr.frac, pr.d);
  require(pr.frac.p >= 2.0, "nonlocal problem: p must be at least 2");
  require(K >= 2, "nonlocal problem: need at least two nodes");
  const std::size_t dd = static_cast<std::size_t>(pr.d);
  require(pr.coords.size() == K * dd, "nonlocal problem: coords size mismatch");
  require(pr.collar.size() == K, "nonlocal problem: collar size mismatch");
  require(pr.forcing.size() == K * dd, "nonlocal problem: forcing size mismatch");
  require(coeff_lower_bound(pr.coeff) > 0.0,
          "nonlocal problem: coefficient must be positive");
  for (double w : pr.weight)
    require(w > 0.0, "nonlocal problem: weights must be positive");

  pr.point_factor.resize(K);
  for (std::size_t i = 0; i < K; ++i)
    pr.point_factor[i] = point_coeff_factor(pr.coeff, pr.d, pr.coords.data() + i * dd);

  bool tables = pr.lattice_born();
  if (tables) {
    require(pr.grid_flat.size() == K, "nonlocal problem: grid_flat size mismatch");
    require(pr.lattice_idx.size() == K * dd,
            "nonlocal problem: lattice index size mismatch");
    if (!pr.periodic) {
      // The wrapped-offset tables identify each pair with its min-image
      // displacement, which matches the Euclidean cloud only while every
      // axis span stays under half a period.
      for (int ax = 0; ax < pr.d && tables; ++ax) {
        int lo = pr.lattice_idx[ax];
        int hi = lo;
        for (std::size_t i = 1; i < K; ++i) {
          const int v = pr.lattice_idx[i * dd + ax];
          lo = std::min(lo, v);
          hi = std::max(hi, v);
        }
        tables = hi - lo < pr.grid.N / 2;
      }
    }
  }
  if (tables) {
    finalize_lattice_tables(pr);
  } else {
    pr.kernel_table.clear();
    pr.dir_table.clear();
  }
}

double pair_kernel_weight(const NonlocalProblem& pr, double r) {
  require(r > 0.0, "pair_kernel_weight: separation must be positive");
  const double sp = pr.frac.s * pr.frac.p;
  if (pr.h_singular > 0.0 && r <= pr.h_singular * kSingularSlack)
    return shell_average_weight(pr.d, sp, pr.h_singular);
  return std::pow(r, -(pr.d + sp));
}

double projected_difference(const double* ui, const double* uj, const double* xi,
                            const double* xj, int d) {
  double r2 = 0.0;
  double dot = 0.0;
  for (int ax = 0; ax < d; ++ax) {
    const double dz = xi[ax] - xj[ax];
    r2 += dz * dz;
    dot += (ui[ax] - uj[ax]) * dz;
  }
  require(r2 > 0.0, "projected_difference: coincident nodes");
  return dot / std::sqrt(r2);
}

double apply_operator(const NonlocalProblem& pr, const std::vector<double>& u,
                      const std::vector<double>& v) {
  const std::size_t K = pr.size();
  const int d = pr.d;
  require(u.size() == K * static_cast<std::size_t>(d), "apply_operator: u size");
  require(v.size() == K * static_cast<std::size_t>(d), "apply_operator: v size");
  const double p = pr.frac.p;
  double out = 0.0;
  chunked_reduce(
      K, 1,
      [&](std::size_t b, std::size_t e, double* partial) {
        for (std::size_t i = b; i < e; ++i) {
          const double wi = pr.weight[i];
          const double pfi = pr.point_factor[i];
          const double* urow = u.data() + i * d;
          const double* vrow = v.data() + i * d;
          pairs_from(pr, i, [&](std::size_t j, double w, const double* dir) {
            double Du = 0.0;
            double Dv = 0.0;
            for (int c = 0; c < d; ++c) {
              Du += (urow[c] - u[j * d + c]) * dir[c];
              Dv += (vrow[c] - v[j * d + c]) * dir[c];
            }
            const double a = 0.5 * (pfi + pr.point_factor[j]);
            partial[0] +=
                wi * pr.weight[j] * a * w * magnitude_factor(Du, p) * Du * Dv;
          });
        }
      },
      &out);
  return out;
}

double forcing_pairing(const NonlocalProblem& pr, const std::vector<double>& v) {
  const std::size_t K = pr.size();
  const int d = pr.d;
  require(v.size() == K * static_cast<std::size_t>(d), "forcing_pairing: v size");
  double out = 0.0;
  chunked_reduce(
      K, 1,
      [&](std::size_t b, std::size_t e, double* partial) {
        for (std::size_t i = b; i < e; ++i) {
          double dot = 0.0;
          for (int c = 0; c < d; ++c) dot += pr.forcing[i * d + c] * v[i * d + c];
          partial[0] += pr.weight[i] * dot;
        }
      },
      &out);
  return out;
}

double energy(const NonlocalProblem& pr, const std::vector<double>& u) {
  const std::size_t K = pr.size();
  const int d = pr.d;
  require(u.size() == K * static_cast<std::size_t>(d), "energy: u size");
  const double p = pr.frac.p;
  double pair_term = 0.0;
  chunked_reduce(
      K, 1,
      [&](std::size_t b, std::size_t e, double* partial) {
        for (std::size_t i = b; i < e; ++i) {
          const double wi = pr.weight[i];
          const double pfi = pr.point_factor[i];
          const double* urow = u.data() + i * d;
          pairs_from(pr, i, [&](std::size_t j, double w, const double* dir) {
            double Du = 0.0;
            for (int c = 0; c < d; ++c) Du += (urow[c] - u[j * d + c]) * dir[c];
            const double a = 0.5 * (pfi + pr.point_factor[j]);
            partial[0] += wi * pr.weight[j] * a * w * magnitude_p(Du, p);
          });
        }
      },
      &pair_term);
  return pair_term / p - forcing_pairing(pr, u);
}

namespace {

// True when some pair's displacement can hit exactly half a period on an
// axis. There the min-image representative is the same for both orderings,
// dir_ji is not -dir_ij, and the factor-2 gradient shortcut is invalid.
bool has_half_period_pairs(const NonlocalProblem& pr) {
  if (pr.kernel_table.empty()) return false;
  const int d = pr.d;
  const int N = pr.grid.N;
  for (int ax = 0; ax < d; ++ax) {
    int lo = pr.lattice_idx[ax];
    int hi = lo;
    for (std::size_t i = 1; i < pr.size(); ++i) {
      const int v = pr.lattice_idx[i * d + ax];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo >= N / 2) return true;
  }
  return false;
}

}  // namespace

std::vector<double> pair_gradient(const NonlocalProblem& pr,
                                  const std::vector<double>& u) {
  const std::size_t K = pr.size();
  const int d = pr.d;
  require(u.size() == K * static_cast<std::size_t>(d), "pair_gradient: u size");
  const double p = pr.frac.p;
  std::vector<double> out(K * d, 0.0);
  if (has_half_period_pairs(pr)) {
    // Differentiate both orderings of every pair explicitly; for the swap-
    // symmetric bulk this reproduces the factor-2 form term by term.
    const int N = pr.grid.N;
    const int mask = N - 1;
    parallel_for_chunks(K, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        const double wi = pr.weight[i];
        const double pfi = pr.point_factor[i];
        const double* urow = u.data() + i * d;
        const int* li = pr.lattice_idx.data() + i * d;
        double acc[3] = {0.0, 0.0, 0.0};
        for (std::size_t j = 0; j < K; ++j) {
          if (j == i) continue;
          const int* lj = pr.lattice_idx.data() + j * d;
          std::size_t off = 0;
          std::size_t off2 = 0;
          for (int ax = 0; ax < d; ++ax) {
            off = off * static_cast<std::size_t>(N) +
                  static_cast<std::size_t>((li[ax] - lj[ax]) & mask);
            off2 = off2 * static_cast<std::size_t>(N) +
                   static_cast<std::size_t>((lj[ax] - li[ax]) & mask);
          }
          const double base = wi * pr.weight[j] *
                              0.5 * (pfi + pr.point_factor[j]) *
                              pr.kernel_table[off];
          const double* dir = pr.dir_table.data() + off * d;
          const double* dir2 = pr.dir_table.data() + off2 * d;
          double Du = 0.0;
          double Du2 = 0.0;
          for (int c = 0; c < d; ++c) {
            const double dz = urow[c] - u[j * d + c];
            Du += dz * dir[c];
            Du2 -= dz * dir2[c];
          }
          const double c1 = base * magnitude_factor(Du, p) * Du;
          const double c2 = base * magnitude_factor(Du2, p) * Du2;
          for (int c = 0; c < d; ++c) acc[c] += c1 * dir[c] - c2 * dir2[c];
        }
        for (int c = 0; c < d; ++c) out[i * d + c] = acc[c];
      }
    });
    return out;
  }
  parallel_for_chunks(K, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const double wi = pr.weight[i];
      const double pfi = pr.point_factor[i];
      const double* urow = u.data() + i * d;
      double acc[3] = {0.0, 0.0, 0.0};
      pairs_from(pr, i, [&](std::size_t j, double w, const double* dir) {
        double Du = 0.0;
        for (int c = 0; c < d; ++c) Du += (urow[c] - u[j * d + c]) * dir[c];
        const double a = 0.5 * (pfi + pr.point_factor[j]);
        const double coef =
            2.0 * wi * pr.weight[j] * a * w * magnitude_factor(Du, p) * Du;
        for (int c = 0; c < d; ++c) acc[c] += coef * dir[c];
      });
      for (int c = 0; c < d; ++c) out[i * d + c] = acc[c];
    }
  });
  return out;
}

std::vector<double> gradient(const NonlocalProblem& pr, const std::vector<double>& u) {
  std::vector<double> g = pair_gradient(pr, u);
  const int d = pr.d;
  for (std::size_t i = 0; i < pr.size(); ++i)
    for (int c = 0; c < d; ++c) g[i * d + c] -= pr.weight[i] * pr.forcing[i * d + c];
  zero_collar_entries(pr, g);
  return g;
}

SolveResult solve_descent(const NonlocalProblem& pr, const SolveOptions& opt) {
  const std::size_t K = pr.size();
  const std::size_t n = K * static_cast<std::size_t>(pr.d);
  require(opt.tol > 0.0, "solve_descent: tol must be positive");
  require(opt.max_iter >= 1, "solve_descent: max_iter must be positive");
  bool has_collar = false;
  bool has_free = false;
  for (std::uint8_t c : pr.collar) (c ? has_collar : has_free) = true;
  require(has_collar, "solve_descent: needs a pinned collar");
  require(has_free, "solve_descent: every node is pinned");

  SolveResult res;
  std::vector<double> u(n, 0.0);
  if (!opt.warm.empty()) {
    require(opt.warm.size() == n, "solve_descent: warm start size mismatch");
    u = opt.warm;
    zero_collar_entries(pr, u);
  }

  const double scale = curvature_scale(pr);
  const double base_step = 1.0 / std::max(scale, 1e-300);

  std::vector<double> g = gradient(pr, u);
  double E = energy(pr, u);
  require(std::isfinite(E), "solve_descent: non-finite initial energy");
  res.energy_trace.push_back(E);
  double gn = euclid_norm(g);
  if (gn <= opt.tol) {
    res.solution = std::move(u);
    res.grad_norm = gn;
    res.converged = true;
    return res;
  }

  std::vector<double> v(n), gnew(n);
  double alpha = base_step;
  int null_steps = 0;
  for (int it = 1; it <= opt.max_iter; ++it) {
    double a = std::clamp(alpha, 1e-10 * base_step, 1e10 * base_step);
    bool accepted = false;
    double Ev = 0.0;
    for (int bt = 0; bt < 60; ++bt) {
      for (std::size_t k = 0; k < n; ++k) v[k] = u[k] - a * g[k];
      Ev = energy(pr, v);
      // The sufficient-decrease margin rounds to zero once it falls below
      // the energy's floating-point resolution; from there any
      // non-increasing step is admissible and progress is tracked through
      // the gradient norm instead.
      if (std::isfinite(Ev) && Ev <= E - 1e-4 * a * gn * gn) {
        accepted = true;
        break;
      }
      a *= 0.5;
    }
    if (!accepted) {
      res.line_search_failed = true;
      break;
    }

    gnew = gradient(pr, v);
    // Two-point steplength from s = -a g and y = gnew - g.
    double sts = 0.0;
    double sty = 0.0;
    double yty = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double s = v[k] - u[k];
      const double y = gnew[k] - g[k];
      sts += s * s;
      sty += s * y;
      yty += y * y;
    }
    alpha = (sty > 0.0 && yty > 0.0) ? sty / yty : base_step;

    // An accepted step that moved no coordinate by a representable amount
    // cannot be improved by rescaling alone; three in a row mean the
    // iterate is pinned at this precision.
    null_steps = sts == 0.0 ? null_steps + 1 : 0;

    u.swap(v);
    E = Ev;
    res.energy_trace.push_back(E);
    g.swap(gnew);
    gn = euclid_norm(g);
    res.iterations = it;
    if (gn <= opt.tol) {
      res.converged = true;
      break;
    }
    if (null_steps >= 3) break;
  }

  res.solution = std::move(u);
  res.grad_norm = gn;
  return res;
}

SolveResult solve_dense_p2(const NonlocalProblem& pr) {
  require(pr.frac.p == 2.0, "solve_dense_p2: p must equal 2");
  const std::size_t K = pr.size();
  const int d = pr.d;
  std::vector<std::ptrdiff_t> slot(K, -1);
  std::ptrdiff_t nf = 0;
  for (std::size_t i = 0; i < K; ++i)
    if (!pr.collar[i]) slot[i] = nf++;
  require(nf > 0, "solve_dense_p2: every node is pinned");
  require(nf < static_cast<std::ptrdiff_t>(K), "solve_dense_p2: needs a pinned collar");

  const std::ptrdiff_t dim = nf * d;
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(dim, dim);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(dim);
  for (std::size_t i = 0; i < K; ++i) {
    const double wi = pr.weight[i];
    const double pfi = pr.point_factor[i];
    pairs_from(pr, i, [&](std::size_t j, double w, const double* dir) {
      if (j <= i) return;
      const double c2 =
          2.0 * wi * pr.weight[j] * 0.5 * (pfi + pr.point_factor[j]) * w;
      const std::ptrdiff_t fi = slot[i];
      const std::ptrdiff_t fj = slot[j];
      for (int a = 0; a < d; ++a)
        for (int c = 0; c < d; ++c) {
          const double blk = c2 * dir[a] * dir[c];
          if (fi >= 0) M(fi * d + a, fi * d + c) += blk;
          if (fj >= 0) M(fj * d + a, fj * d + c) += blk;
          if (fi >= 0 && fj >= 0) {
            M(fi * d + a, fj * d + c) -= blk;
            M(fj * d + a, fi * d + c) -= blk;
          }
        }
    });
    if (slot[i] >= 0)
      for (int c = 0; c < d; ++c) b(slot[i] * d + c) = wi * pr.forcing[i * d + c];
  }

  Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
  require(ldlt.info() == Eigen::Success, "solve_dense_p2: factorization failed");
  const Eigen::VectorXd x = ldlt.solve(b);

  SolveResult res;
  res.solution.assign(K * d, 0.0);
  for (std::size_t i = 0; i < K; ++i)
    if (slot[i] >= 0)
      for (int c = 0; c < d; ++c) res.solution[i * d + c] = x(slot[i] * d + c);
  const std::vector<double> zero(K * d, 0.0);
  res.energy_trace = {energy(pr, zero), energy(pr, res.solution)};
  res.grad_norm = euclid_norm(gradient(pr, res.solution));
  res.iterations = 1;
  res.converged = true;
  return res;
}

NonlocalProblem make_lattice_problem(const GridSpec& g, const LatticeDomain& dom,
                                     const FracParams& frac, const CoeffSpec& coeff) {
  require(dom.halfwidth > 0.0 && dom.halfwidth < 0.5 * g.L,
          "make_lattice_problem: halfwidth must sit inside the box");
  require(dom.collar_width > 0.0 && dom.collar_width < dom.halfwidth,
          "make_lattice_problem: collar must be thinner than the domain");
  NonlocalProblem pr;
  pr.d = g.d;
  pr.frac = frac;
  pr.coeff = coeff;
  pr.grid = g;
  pr.center = dom.center;
  pr.h_singular = g.h();
  const double slack = 1e-12 * g.L;
  const double wmass = std::pow(g.h(), g.d);
  for_each_node(g, [&](std::size_t flat, const int* idx) {
    double x[3];
    g.node_coords(flat, x);
    double linf = 0.0;
    for (int ax = 0; ax < g.d; ++ax)
      linf = std::max(linf, std::fabs(x[ax] - dom.center[ax]));
    if (linf > dom.halfwidth + slack) return;
    pr.grid_flat.push_back(flat);
    for (int ax = 0; ax < g.d; ++ax) {
      pr.lattice_idx.push_back(idx[ax]);
      pr.coords.push_back(x[ax]);
    }
    pr.weight.push_back(wmass);
    pr.collar.push_back((dom.halfwidth - linf) <= dom.collar_width + slack ? 1 : 0);
  });
  pr.forcing.assign(pr.size() * static_cast<std::size_t>(g.d), 0.0);
  bool has_free = false;
  for (std::uint8_t c : pr.collar) has_free = has_free || !c;
  require(has_free, "make_lattice_problem: collar swallowed the domain");
  finalize_problem(pr);
  return pr;
}

NonlocalProblem make_disc_problem(const GridSpec& g, const std::array<double, 3>& center,
                                  std::size_t count, double collar_width,
                                  const FracParams& frac, const CoeffSpec& coeff) {
  require(count >= 2 && count <= g.points(),
          "make_disc_problem: count outside the grid");
  require(collar_width > 0.0, "make_disc_problem: collar width must be positive");
  std::vector<std::pair<double, std::size_t>> order;
  order.reserve(g.points());
  for_each_node(g, [&](std::size_t flat, const int*) {
    double x[3];
    g.node_coords(flat, x);
    double r2 = 0.0;
    for (int ax = 0; ax < g.d; ++ax) {
      const double dz = x[ax] - center[ax];
      r2 += dz * dz;
    }
    order.emplace_back(r2, flat);
  });
  std::sort(order.begin(), order.end());

  NonlocalProblem pr;
  pr.d = g.d;
  pr.frac = frac;
  pr.coeff = coeff;
  pr.grid = g;
  pr.center = center;
  pr.h_singular = g.h();
  const double radius = std::sqrt(order[count - 1].first);
  const double wmass = std::pow(g.h(), g.d);
  int idx[3];
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t flat = order[k].second;
    g.node_multi(flat, idx);
    double x[3];
    g.node_coords(flat, x);
    pr.grid_flat.push_back(flat);
    for (int ax = 0; ax < g.d; ++ax) {
      pr.lattice_idx.push_back(idx[ax]);
      pr.coords.push_back(x[ax]);
    }
    pr.weight.push_back(wmass);
    const double r = std::sqrt(order[k].first);
    pr.collar.push_back((radius - r) <= collar_width * (1.0 + 1e-12) ? 1 : 0);
  }
  pr.forcing.assign(pr.size() * static_cast<std::size_t>(g.d), 0.0);
  bool has_free = false;
  for (std::uint8_t c : pr.collar) has_free = has_free || !c;
  require(has_free, "make_disc_problem: collar swallowed the disc");
  finalize_problem(pr);
  return pr;
}

NonlocalProblem make_torus_problem(const GridSpec& g, const FracParams& frac,
                                   const CoeffSpec& coeff) {
  NonlocalProblem pr;
  pr.d = g.d;
  pr.frac = frac;
  pr.coeff = coeff;
  pr.grid = g;
  pr.periodic = true;
  pr.h_singular = g.h();
  const double wmass = std::pow(g.h(), g.d);
  for_each_node(g, [&](std::size_t flat, const int* idx) {
    double x[3];
    g.node_coords(flat, x);
    pr.grid_flat.push_back(flat);
    for (int ax = 0; ax < g.d; ++ax) {
      pr.lattice_idx.push_back(idx[ax]);
      pr.coords.push_back(x[ax]);
    }
    pr.weight.push_back(wmass);
    pr.collar.push_back(0);
  });
  pr.forcing.assign(pr.size() * static_cast<std::size_t>(g.d), 0.0);
  finalize_problem(pr);
  return pr;
}

void set_forcing_bump(NonlocalProblem& pr, const std::array<double, 3>& center,
                      double inner, double outer, const std::array<double, 3>& amp) {
  require(0.0 <= inner && inner < outer, "set_forcing_bump: need 0 <= inner < outer");
  const int d = pr.d;
  for (std::size_t i = 0; i < pr.size(); ++i) {
    double r2 = 0.0;
    for (int ax = 0; ax < d; ++ax) {
      const double dz = pr.coords[i * d + ax] - center[ax];
      r2 += dz * dz;
    }
    const double win = special::radial_window(std::sqrt(r2), inner, outer);
    for (int ax = 0; ax < d; ++ax) pr.forcing[i * d + ax] = amp[ax] * win;
  }
}

VectorField embed_on_grid(const NonlocalProblem& pr, const std::vector<double>& u) {
  require(pr.lattice_born(), "embed_on_grid: problem has no parent grid");
  const int d = pr.d;
  require(u.size() == pr.size() * static_cast<std::size_t>(d), "embed_on_grid: u size");
  VectorField f = make_field(pr.grid, d);
  for (std::size_t i = 0; i < pr.size(); ++i)
    for (int c = 0; c < d; ++c) f.values[pr.grid_flat[i] * d + c] = u[i * d + c];
  return f;
}

std::vector<double> restrict_from_grid(const NonlocalProblem& pr, const VectorField& f) {
  require(pr.lattice_born(), "restrict_from_grid: problem has no parent grid");
  require(f.grid == pr.grid, "restrict_from_grid: grid mismatch");
  require(f.m == pr.d, "restrict_from_grid: component mismatch");
  const int d = pr.d;
  std::vector<double> u(pr.size() * d);
  for (std::size_t i = 0; i < pr.size(); ++i)
    for (int c = 0; c < d; ++c) u[i * d + c] = f.values[pr.grid_flat[i] * d + c];
  return u;
}

std::vector<double> prolong_solution(const NonlocalProblem& coarse,
                                     const std::vector<double>& u_coarse,
                                     const NonlocalProblem& fine) {
  require(coarse.lattice_born() && fine.lattice_born(),
          "prolong_solution: both problems need parent grids");
  require(coarse.d == fine.d, "prolong_solution: dimension mismatch");
  require(coarse.grid.L == fine.grid.L, "prolong_solution: box size mismatch");
  const int d = fine.d;
  const VectorField cf = embed_on_grid(coarse, u_coarse);
  const GridSpec& cg = coarse.grid;
  const int Nc = cg.N;
  const double hc = cg.h();

  std::vector<double> out(fine.size() * d, 0.0);
  int base[3] = {0, 0, 0};
  double frac[3] = {0.0, 0.0, 0.0};
  int corner[3] = {0, 0, 0};
  for (std::size_t i = 0; i < fine.size(); ++i) {
    for (int ax = 0; ax < d; ++ax) {
      const double t = (fine.coords[i * d + ax] + 0.5 * cg.L) / hc;
      const double fl = std::floor(t);
      base[ax] = static_cast<int>(fl);
      frac[ax] = t - fl;
    }
    for (int bits = 0; bits < (1 << d); ++bits) {
      double wgt = 1.0;
      for (int ax = 0; ax < d; ++ax) {
        const int hi = (bits >> ax) & 1;
        wgt *= hi ? frac[ax] : 1.0 - frac[ax];
        corner[ax] = ((base[ax] + hi) % Nc + Nc) % Nc;
      }
      if (wgt == 0.0) continue;
      const std::size_t flat = cg.flat_index(corner);
      for (int c = 0; c < d; ++c) out[i * d + c] += wgt * cf.values[flat * d + c];
    }
  }
  zero_collar_entries(fine, out);
  return out;
}

NonlocalProblem read_problem_csv(const std::string& path, int d,
                                 const FracParams& frac, const CoeffSpec& coeff) {
  require(d >= 1 && d <= 3, "read_problem_csv: d must be 1..3");
  std::ifstream in(path);
  require(in.good(), "read_problem_csv: cannot open " + path);

  NonlocalProblem pr;
  pr.d = d;
  pr.frac = frac;
  pr.coeff = coeff;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string cleaned;
    cleaned.reserve(line.size());
    for (char ch : line) cleaned.push_back(ch == ',' ? ' ' : ch);
    std::istringstream row(cleaned);
    std::string first;
    if (!(row >> first) || first[0] == '#') continue;
    row.clear();
    row.str(cleaned);

    std::vector<double> vals(2 * d + 2);
    for (double& v : vals)
      require(static_cast<bool>(row >> v),
              "read_problem_csv: malformed row " + std::to_string(lineno));
    for (int ax = 0; ax < d; ++ax) pr.coords.push_back(vals[ax]);
    pr.weight.push_back(vals[d]);
    pr.collar.push_back(vals[d + 1] != 0.0 ? 1 : 0);
    for (int ax = 0; ax < d; ++ax) pr.forcing.push_back(vals[d + 2 + ax]);
  }
  const std::size_t K = pr.size();
  require(K >= 2, "read_problem_csv: need at least two nodes");

  double min_r2 = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < K; ++i)
    for (std::size_t j = i + 1; j < K; ++j) {
      double r2 = 0.0;
      for (int ax = 0; ax < d; ++ax) {
        const double dz = pr.coords[i * d + ax] - pr.coords[j * d + ax];
        r2 += dz * dz;
      }
      min_r2 = std::min(min_r2, r2);
    }
  require(min_r2 > 0.0, "read_problem_csv: duplicate nodes");
  pr.h_singular = std::sqrt(min_r2);
  finalize_problem(pr);
  return pr;
}

void write_solution_csv(const NonlocalProblem& pr, const std::vector<double>& u,
                        const std::string& path) {
  const int d = pr.d;
  require(u.size() == pr.size() * static_cast<std::size_t>(d),
          "write_solution_csv: u size");
  std::ofstream out(path);
  require(out.good(), "write_solution_csv: cannot open " + path);
  out << "#";
  for (int ax = 0; ax < d; ++ax) out << " x" << ax;
  for (int c = 0; c < d; ++c) out << " u" << c;
  out << "\n" << std::setprecision(17);
  for (std::size_t i = 0; i < pr.size(); ++i) {
    for (int ax = 0; ax < d; ++ax) out << pr.coords[i * d + ax] << ",";
    for (int c = 0; c < d; ++c)
      out << u[i * d + c] << (c + 1 == d ? "" : ",");
    out << "\n";
  }
  require(out.good(), "write_solution_csv: write failed");
}

void write_solve_report_json(const SolveResult& res, const std::string& path) {
  nlohmann::json j;
  j["converged"] = res.converged;
  j["energy_trace"] = res.energy_trace;
  j["grad_norm"] = res.grad_norm;
  j["iterations"] = res.iterations;
  j["line_search_failed"] = res.line_search_failed;
  j["final_energy"] = res.energy_trace.empty() ? 0.0 : res.energy_trace.back();
  std::ofstream out(path);
  require(out.good(), "write_solve_report_json: cannot open " + path);
  out << j.dump(2) << "\n";
  require(out.good(), "write_solve_report_json: write failed");
}

std::vector<SelfImprovementRow> measure_self_improvement(
    const NonlocalProblem& pr, const std::vector<double>& u,
    const std::vector<double>& eps_grid, double eta_ones_radius,
    double eta_zero_radius, DualProbeDictionary& probes, int probe_budget) {
  require(pr.lattice_born(), "measure_self_improvement: lattice-born only");
  require(!eps_grid.empty(), "measure_self_improvement: empty eps grid");
  require(0.0 < eta_ones_radius && eta_ones_radius < eta_zero_radius,
          "measure_self_improvement: cutoff radii out of order");
  require(probes.grid() == pr.grid, "measure_self_improvement: probe grid mismatch");
  const double s = pr.frac.s;
  const double p = pr.frac.p;
  for (double eps : eps_grid) {
    FracParams shifted{s, p, eps};
    validate_frac(shifted, pr.d);
  }

  const GridSpec& g = pr.grid;
  const int d = pr.d;
  const VectorField U = embed_on_grid(pr, u);
  VectorField etaU = U;
  for_each_node(g, [&](std::size_t flat, const int*) {
    double x[3];
    g.node_coords(flat, x);
    double r2 = 0.0;
    for (int ax = 0; ax < d; ++ax) {
      const double dz = x[ax] - pr.center[ax];
      r2 += dz * dz;
    }
    const double eta =
        special::radial_window(std::sqrt(r2), eta_ones_radius, eta_zero_radius);
    for (int c = 0; c < d; ++c) etaU.values[flat * d + c] *= eta;
  });

  const double hint_reach = eta_zero_radius + g.h();
  std::vector<std::uint8_t> hint(g.points(), 0);
  for_each_node(g, [&](std::size_t flat, const int*) {
    double x[3];
    g.node_coords(flat, x);
    double linf = 0.0;
    for (int ax = 0; ax < d; ++ax)
      linf = std::max(linf, std::fabs(x[ax] - pr.center[ax]));
    if (linf <= hint_reach) hint[flat] = 1;
  });
  PairSumOptions lhs_opt;
  lhs_opt.support_hint = &hint;
  lhs_opt.with_bracket = false;
  std::vector<FracParams> raised;
  for (double eps : eps_grid) raised.push_back(FracParams{s + eps, p, 0.0});
  const std::vector<PairSeminormPair> lhs = pair_seminorms(etaU, raised, lhs_opt);

  std::vector<std::uint8_t> mask(g.points(), 0);
  for (std::size_t f : pr.grid_flat) mask[f] = 1;
  PairSumOptions xopt;
  xopt.domain_mask = &mask;
  xopt.with_bracket = false;
  const double xnorm = x_norm(U, FracParams{s, p, 0.0}, xopt);

  const auto functional = [&](const VectorField& phi) {
    return forcing_pairing(pr, restrict_from_grid(pr, phi));
  };

  std::vector<SelfImprovementRow> rows;
  for (std::size_t k = 0; k < eps_grid.size(); ++k) {
    SelfImprovementRow row;
    row.eps = eps_grid[k];
    row.lhs = lhs[k].gagliardo.value;
    FracParams dual_fp{s - eps_grid[k] * (p - 1.0), p, 0.0};
    row.dual = dual_norm_estimate(functional, probes, dual_fp, probe_budget);
    row.xnorm = xnorm;
    row.ratio = row.lhs / (std::pow(row.dual, 1.0 / (p - 1.0)) + row.xnorm);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace korn
