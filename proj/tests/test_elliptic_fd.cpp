#include "doctest.h"

#include "mosaic/elliptic_fd.hpp"
#include "mosaic/errors.hpp"

#include <cmath>
#include <numbers>
#include <random>

using namespace mosaic;

namespace {

double harmonic_quadratic(Point p) { return p.x * p.x - p.y * p.y + p.x * p.y; }

double max_abs_error(const FieldGrid& f, const ScalarFunction& exact) {
  double worst = 0.0;
  for (int j = 0; j < f.ny(); ++j) {
    for (int i = 0; i < f.nx(); ++i) {
      if (f.active(i, j)) worst = std::max(worst, std::abs(f(i, j) - exact(f.position(i, j))));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("solve_dirichlet reproduces constants and the stencil-exact class") {
  const auto unit = DomainMask::rectangle(1, 1);
  const auto c = solve_dirichlet(unit, [](Point) { return 2.5; });
  CHECK(c.nx() == 33);
  CHECK(max_abs_error(c, [](Point) { return 2.5; }) <= 1e-12);

  const auto q = solve_dirichlet(unit, harmonic_quadratic);
  CHECK(max_abs_error(q, harmonic_quadratic) <= 1e-9);
  CHECK(compute_mar_fd(q) <= 1e-10 * 33 * 33);

  // Works on non-convex masks as well.
  const DomainMask ell({{0, 0}, {1, 0}, {0, 1}});
  const auto qe = solve_dirichlet(ell, harmonic_quadratic);
  CHECK(max_abs_error(qe, harmonic_quadratic) <= 1e-9);
  CHECK_THROWS_AS(solve_dirichlet(unit, harmonic_quadratic, 1.0, 1), ContractError);
}

TEST_CASE("solve_dirichlet converges at second order under refinement") {
  const auto unit = DomainMask::rectangle(1, 1);
  auto g2 = [](Point p) { return std::sin(2.0 * std::numbers::pi * point_to_perimeter(p, 1.0)); };
  const auto coarse = solve_dirichlet(unit, g2, 1.0, 16);
  const auto mid = solve_dirichlet(unit, g2, 1.0, 32);
  const auto fine = solve_dirichlet(unit, g2, 1.0, 64);
  // Differences at the shared coarse vertices shrink by ~4 per halving of h.
  double d1 = 0.0, d2 = 0.0;
  for (int j = 0; j <= 16; ++j) {
    for (int i = 0; i <= 16; ++i) {
      d1 = std::max(d1, std::abs(coarse(i, j) - mid(2 * i, 2 * j)));
      d2 = std::max(d2, std::abs(mid(2 * i, 2 * j) - fine(4 * i, 4 * j)));
    }
  }
  const double ratio = d1 / d2;
  CHECK(ratio > 3.0);
  CHECK(ratio < 5.0);
}

TEST_CASE("numeric genome solver: maximum principle and linearity on random traces") {
  const NumericGenomeSolver solver;
  std::mt19937_64 rng(17);
  std::normal_distribution<double> n01;
  auto random_trace = [&] {
    // Smooth random trace from a few Fourier modes around the perimeter.
    Eigen::VectorXd v(128);
    const double a1 = n01(rng), b1 = n01(rng), a3 = n01(rng), c0 = n01(rng);
    for (int i = 0; i < 128; ++i) {
      const double t = 2.0 * std::numbers::pi * i / 128;
      v[i] = c0 + a1 * std::cos(t) + b1 * std::sin(t) + a3 * std::sin(3 * t);
    }
    return BoundaryTrace(v);
  };
  for (int trial = 0; trial < 200; ++trial) {
    const auto t = random_trace();
    const auto f = solver.solve_field(t);
    CHECK(f.data().minCoeff() >= t.values().minCoeff() - 1e-12);
    CHECK(f.data().maxCoeff() <= t.values().maxCoeff() + 1e-12);
  }
  for (int trial = 0; trial < 20; ++trial) {
    const auto t1 = random_trace(), t2 = random_trace();
    const double a = n01(rng), b = n01(rng);
    const auto lhs = solver.solve_field(BoundaryTrace(a * t1.values() + b * t2.values()));
    const Eigen::VectorXd rhs = a * solver.solve_field(t1).data() + b * solver.solve_field(t2).data();
    CHECK((lhs.data() - rhs).norm() <= 1e-9 * (1.0 + rhs.norm()));
  }
}

TEST_CASE("numeric genome solver queries") {
  const auto constant = genome_solver_numeric(trace_from_function([](Point) { return -1.25; }));
  CHECK(constant->value({0.123, 0.77}) == doctest::Approx(-1.25).epsilon(1e-12));

  const auto trace = trace_from_function(harmonic_quadratic);
  const auto sol = genome_solver_numeric(trace);
  CHECK(std::abs(sol->value({0.5, 0.5}) - 0.25) <= 1e-9);
  for (int i = 0; i < 128; ++i) CHECK(sol->value(trace.point(i)) == trace[i]);
  CHECK_THROWS_AS(sol->value({1.5, 0.5}), DomainError);

  // Stencil exactness over the span {1, x, y, xy, x^2 - y^2}.
  const NumericGenomeSolver solver;
  const ScalarFunction basis[] = {[](Point) { return 1.0; }, [](Point p) { return p.x; },
                                  [](Point p) { return p.y; }, [](Point p) { return p.x * p.y; },
                                  [](Point p) { return p.x * p.x - p.y * p.y; }};
  for (const auto& f : basis) {
    CHECK(max_abs_error(solver.solve_field(trace_from_function(f)), f) <= 1e-9);
  }
  CHECK_THROWS_AS(solver.solve(trace_from_function(harmonic_quadratic, 1.0, 16)), ContractError);
}

TEST_CASE("sample_on_segment") {
  const auto c = genome_solver_numeric(trace_from_function([](Point) { return 4.0; }));
  const auto v = sample_on_segment(*c, {0.1, 0.2}, {0.9, 0.2}, 7);
  CHECK(v.size() == 7);
  for (double x : v) CHECK(x == doctest::Approx(4.0).epsilon(1e-12));

  const auto trace = trace_from_function(harmonic_quadratic);
  const auto sol = genome_solver_numeric(trace);
  const auto mid = sample_on_segment(*sol, {0.5, 0.0}, {0.5, 1.0}, 3);
  CHECK(std::abs(mid[0] - 0.25) <= 1e-9);
  CHECK(std::abs(mid[1] - 0.25) <= 1e-9);
  CHECK(std::abs(mid[2] + 0.25) <= 1e-9);

  const auto edge = sample_on_segment(*sol, {0.0, 0.0}, {1.0, 0.0}, 33);
  for (int k = 0; k <= 32; ++k) CHECK(edge[k] == trace[k == 32 ? 32 : k]);
  CHECK_THROWS_AS(sample_on_segment(*sol, {0.5, 0.5}, {1.5, 0.5}, 3), DomainError);
}
