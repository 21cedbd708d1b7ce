#include "mosaic/elliptic_fd.hpp"

#include "mosaic/errors.hpp"

#include <cmath>
#include <string>

namespace mosaic {

Eigen::VectorXd GenomeSolution::values(std::span<const Point> local) const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(local.size()));
  for (std::size_t k = 0; k < local.size(); ++k) out[static_cast<Eigen::Index>(k)] = value(local[k]);
  return out;
}

Eigen::VectorXd sample_on_segment(const GenomeSolution& solution, Point a, Point b, int n_points) {
  if (n_points < 2) throw ContractError("sample_on_segment: need at least 2 points");
  const double l = solution.edge_length();
  const double tol = 1e-12 * l;
  for (Point p : {a, b}) {
    if (p.x < -tol || p.y < -tol || p.x > l + tol || p.y > l + tol) {
      throw DomainError("sample_on_segment: segment leaves the genome");
    }
  }
  std::vector<Point> pts(static_cast<std::size_t>(n_points));
  for (int k = 0; k < n_points; ++k) {
    const double t = static_cast<double>(k) / (n_points - 1);
    pts[static_cast<std::size_t>(k)] = {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
  }
  pts.back() = b;
  return solution.values(pts);
}

// ---------------------------------------------------------------------------

DomainGrid make_domain_grid(const DomainMask& domain, double l, int cells_per_edge) {
  if (cells_per_edge < 2) throw ContractError("make_domain_grid: need at least 2 cells per edge");
  const int n = cells_per_edge;
  const int nx = domain.width() * n + 1;
  const int ny = domain.height() * n + 1;
  const double h = l / n;
  const Point origin{domain.min_x() * l, domain.min_y() * l};
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(nx) * ny, 0);
  std::vector<std::uint8_t> boundary(mask.size(), 0);

  // A vertex is active when any of its four quadrants lies in a mask cell and
  // interior when all four do.
  auto cell_of = [&](int fine) { return fine >= 0 ? fine / n : -1; };
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      int inside = 0;
      for (int dj = -1; dj <= 0; ++dj) {
        for (int di = -1; di <= 0; ++di) {
          const int ci = cell_of(i + di);
          const int cj = cell_of(j + dj);
          if (ci >= 0 && cj >= 0 && domain.contains(domain.min_x() + ci, domain.min_y() + cj)) ++inside;
        }
      }
      const auto idx = static_cast<std::size_t>(j) * nx + i;
      mask[idx] = inside > 0;
      boundary[idx] = inside > 0 && inside < 4;
    }
  }
  FieldGrid layout(nx, ny, origin, h, h, Eigen::VectorXd::Zero(static_cast<Eigen::Index>(nx) * ny),
                   std::move(mask));
  return {std::move(layout), std::move(boundary)};
}

SparseSystem assemble_laplace(const FieldGrid& values, const std::vector<std::uint8_t>& dirichlet) {
  const int nx = values.nx();
  const int ny = values.ny();
  if (dirichlet.size() != static_cast<std::size_t>(values.size())) {
    throw ContractError("assemble_laplace: Dirichlet flags must cover every vertex");
  }
  SparseSystem sys;
  sys.unknown_of_vertex.assign(static_cast<std::size_t>(values.size()), -1);
  Eigen::Index n_unknown = 0;
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const auto idx = values.index(i, j);
      if (values.active(i, j) && !dirichlet[static_cast<std::size_t>(idx)]) {
        sys.unknown_of_vertex[static_cast<std::size_t>(idx)] = n_unknown++;
      }
    }
  }
  if (n_unknown == 0) throw ContractError("assemble_laplace: domain has no interior vertex");

  const double cx = 1.0 / (values.dx() * values.dx());
  const double cy = 1.0 / (values.dy() * values.dy());
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(n_unknown) * 5);
  sys.rhs = Eigen::VectorXd::Zero(n_unknown);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const Eigen::Index row = sys.unknown_of_vertex[static_cast<std::size_t>(values.index(i, j))];
      if (row < 0) continue;
      triplets.emplace_back(row, row, 2.0 * cx + 2.0 * cy);
      const struct {
        int i, j;
        double c;
      } nbrs[] = {{i - 1, j, cx}, {i + 1, j, cx}, {i, j - 1, cy}, {i, j + 1, cy}};
      for (const auto& nb : nbrs) {
        if (nb.i < 0 || nb.j < 0 || nb.i >= nx || nb.j >= ny || !values.active(nb.i, nb.j)) {
          throw ContractError("assemble_laplace: unknown vertex touches the grid edge");
        }
        const Eigen::Index col = sys.unknown_of_vertex[static_cast<std::size_t>(values.index(nb.i, nb.j))];
        if (col >= 0) {
          triplets.emplace_back(row, col, -nb.c);
        } else {
          sys.rhs[row] += nb.c * values(nb.i, nb.j);
        }
      }
    }
  }
  sys.matrix.resize(n_unknown, n_unknown);
  sys.matrix.setFromTriplets(triplets.begin(), triplets.end());
  return sys;
}

FieldGrid solve_laplace(FieldGrid values, const std::vector<std::uint8_t>& dirichlet) {
  SparseSystem sys = assemble_laplace(values, dirichlet);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(sys.matrix);
  if (ldlt.info() != Eigen::Success) throw NumericalError("solve_laplace: factorization failed");
  const Eigen::VectorXd u = ldlt.solve(sys.rhs);
  if (ldlt.info() != Eigen::Success || !u.allFinite()) {
    throw NumericalError("solve_laplace: solve failed");
  }
  for (Eigen::Index k = 0; k < values.size(); ++k) {
    const Eigen::Index col = sys.unknown_of_vertex[static_cast<std::size_t>(k)];
    if (col >= 0) values.data()[k] = u[col];
  }
  return values;
}

FieldGrid solve_dirichlet(const DomainMask& domain, const ScalarFunction& bc, double l,
                          int cells_per_edge) {
  DomainGrid grid = make_domain_grid(domain, l, cells_per_edge);
  FieldGrid& f = grid.layout;
  for (int j = 0; j < f.ny(); ++j) {
    for (int i = 0; i < f.nx(); ++i) {
      if (!grid.is_boundary(i, j)) continue;
      const double v = bc(f.position(i, j));
      if (!std::isfinite(v)) throw DataError("solve_dirichlet: non-finite boundary value");
      f(i, j) = v;
    }
  }
  return solve_laplace(std::move(grid.layout), grid.boundary);
}

// ---------------------------------------------------------------------------

GridSolution::GridSolution(FieldGrid field) : field_(std::move(field)) {
  if (field_.nx() < 2 || field_.ny() < 2) throw ContractError("GridSolution: grid too small");
}

double GridSolution::value(Point p) const {
  const double lx = (field_.nx() - 1) * field_.dx();
  const double ly = (field_.ny() - 1) * field_.dy();
  const double tol = 1e-9 * std::max(lx, ly);
  const double x = p.x - field_.origin().x;
  const double y = p.y - field_.origin().y;
  if (!(x >= -tol && y >= -tol && x <= lx + tol && y <= ly + tol)) {
    throw DomainError("GridSolution: query (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                      ") outside the genome");
  }
  auto locate = [](double u, int n, int& cell, double& t) {
    double r = std::round(u);
    if (std::abs(u - r) < 1e-9) u = r;
    cell = std::clamp(static_cast<int>(std::floor(u)), 0, n - 2);
    t = std::clamp(u - cell, 0.0, 1.0);
  };
  int i, j;
  double tx, ty;
  locate(x / field_.dx(), field_.nx(), i, tx);
  locate(y / field_.dy(), field_.ny(), j, ty);
  const double v00 = field_(i, j), v10 = field_(i + 1, j);
  const double v01 = field_(i, j + 1), v11 = field_(i + 1, j + 1);
  const double bottom = tx == 0.0 ? v00 : (tx == 1.0 ? v10 : (1.0 - tx) * v00 + tx * v10);
  const double top = tx == 0.0 ? v01 : (tx == 1.0 ? v11 : (1.0 - tx) * v01 + tx * v11);
  if (ty == 0.0) return bottom;
  if (ty == 1.0) return top;
  return (1.0 - ty) * bottom + ty * top;
}

// ---------------------------------------------------------------------------

namespace {

FieldGrid genome_layout(int n, double l) {
  const double h = l / n;
  return FieldGrid(n + 1, n + 1, {0.0, 0.0}, h, h);
}

std::vector<std::uint8_t> genome_boundary_flags(int n) {
  std::vector<std::uint8_t> flags(static_cast<std::size_t>(n + 1) * (n + 1), 0);
  for (int j = 0; j <= n; ++j) {
    for (int i = 0; i <= n; ++i) {
      if (i == 0 || j == 0 || i == n || j == n) flags[static_cast<std::size_t>(j) * (n + 1) + i] = 1;
    }
  }
  return flags;
}

/// Vertex (i, j) of trace sample k on the native genome grid.
std::pair<int, int> trace_vertex(int k, int n) {
  const int edge = k / n;
  const int m = k % n;
  switch (edge) {
    case 0: return {m, 0};
    case 1: return {n, m};
    case 2: return {n - m, n};
    default: return {0, n - m};
  }
}

}  // namespace

NumericGenomeSolver::NumericGenomeSolver(int n_per_edge, double l) : n_(n_per_edge), l_(l) {
  if (n_ < 2) throw ContractError("NumericGenomeSolver: need at least 2 cells per edge");
  const SparseSystem sys = assemble_laplace(genome_layout(n_, l_), genome_boundary_flags(n_));
  factor_.compute(sys.matrix);
  if (factor_.info() != Eigen::Success) throw NumericalError("NumericGenomeSolver: factorization failed");
}

FieldGrid NumericGenomeSolver::solve_field(const BoundaryTrace& trace) const {
  if (trace.n_per_edge() != n_) {
    throw ContractError("NumericGenomeSolver: trace has " + std::to_string(trace.n_per_edge()) +
                        " points per edge, solver expects " + std::to_string(n_));
  }
  FieldGrid field = genome_layout(n_, l_);
  for (int k = 0; k < trace.size(); ++k) {
    const auto [i, j] = trace_vertex(k, n_);
    field(i, j) = trace[k];
  }
  // Right-hand side from the Dirichlet ring; the interior ordering matches
  // assemble_laplace (row-major over interior vertices).
  const double c = 1.0 / (field.dx() * field.dx());
  const int m = n_ - 1;
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m) * m);
  for (int j = 1; j < n_; ++j) {
    for (int i = 1; i < n_; ++i) {
      double b = 0.0;
      if (i == 1) b += field(0, j);
      if (i == n_ - 1) b += field(n_, j);
      if (j == 1) b += field(i, 0);
      if (j == n_ - 1) b += field(i, n_);
      rhs[static_cast<Eigen::Index>(j - 1) * m + (i - 1)] = c * b;
    }
  }
  const Eigen::VectorXd u = factor_.solve(rhs);
  if (!u.allFinite()) throw NumericalError("NumericGenomeSolver: non-finite solution");
  for (int j = 1; j < n_; ++j) {
    for (int i = 1; i < n_; ++i) field(i, j) = u[static_cast<Eigen::Index>(j - 1) * m + (i - 1)];
  }
  return field;
}

std::shared_ptr<const GenomeSolution> NumericGenomeSolver::solve(const BoundaryTrace& trace) const {
  return std::make_shared<GridSolution>(solve_field(trace));
}

std::shared_ptr<const GenomeSolution> genome_solver_numeric(const BoundaryTrace& trace) {
  const NumericGenomeSolver solver(trace.n_per_edge(), trace.edge_length());
  return solver.solve(trace);
}

}  // namespace mosaic
