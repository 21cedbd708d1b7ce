#pragma once

// Five-point finite-difference Laplace solver on unions of unit cells.

#include "mosaic/field.hpp"
#include "mosaic/genome_solver.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

namespace mosaic {

/// Vertex grid of a masked domain: the layout (with activity mask) and the
/// vertices lying on the domain boundary.
struct DomainGrid {
  FieldGrid layout;
  std::vector<std::uint8_t> boundary;

  bool is_boundary(int i, int j) const { return boundary[layout.index(i, j)] != 0; }
};

/// `cells_per_edge` grid cells per genome edge of length l.
DomainGrid make_domain_grid(const DomainMask& domain, double l, int cells_per_edge);

/// Interior-Laplace system -L u = rhs (SPD, diagonally dominant) over the
/// non-Dirichlet active vertices of `values`.
struct SparseSystem {
  Eigen::SparseMatrix<double> matrix;
  Eigen::VectorXd rhs;
  /// Unknown index for each vertex, -1 for Dirichlet or inactive vertices.
  std::vector<Eigen::Index> unknown_of_vertex;

  Eigen::Index n() const { return rhs.size(); }
};

SparseSystem assemble_laplace(const FieldGrid& values, const std::vector<std::uint8_t>& dirichlet);

/// Solves the discrete Laplace equation; Dirichlet vertices keep their
/// values. Throws ContractError if there is no unknown.
FieldGrid solve_laplace(FieldGrid values, const std::vector<std::uint8_t>& dirichlet);

/// Ground-truth solve over a masked domain with boundary data bc evaluated at
/// boundary vertices.
FieldGrid solve_dirichlet(const DomainMask& domain, const ScalarFunction& bc, double l = 1.0,
                          int cells_per_edge = kDefaultPointsPerEdge);

/// Bilinear interpolant of a vertex field over [0,l]^2.
class GridSolution final : public GenomeSolution {
 public:
  explicit GridSolution(FieldGrid field);

  double value(Point local) const override;
  double edge_length() const override { return (field_.nx() - 1) * field_.dx(); }
  const FieldGrid& field() const { return field_; }

 private:
  FieldGrid field_;
};

/// Genome solver backed by the finite-difference solve on the native
/// (n_per_edge+1)^2 grid, where trace samples land exactly on boundary
/// vertices. The interior factorization is computed once.
class NumericGenomeSolver final : public GenomeSolver {
 public:
  explicit NumericGenomeSolver(int n_per_edge = kDefaultPointsPerEdge, double l = 1.0);

  std::shared_ptr<const GenomeSolution> solve(const BoundaryTrace& trace) const override;
  FieldGrid solve_field(const BoundaryTrace& trace) const;

  int n_per_edge() const override { return n_; }
  double edge_length() const override { return l_; }
  std::string name() const override { return "oracle"; }

 private:
  int n_;
  double l_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> factor_;
};

std::shared_ptr<const GenomeSolution> genome_solver_numeric(const BoundaryTrace& trace);

}  // namespace mosaic
