#pragma once

#include "mosaic/field.hpp"

#include <memory>
#include <span>
#include <string>

namespace mosaic {

/// Solution of one genome BVP, queried in genome-local coordinates.
/// Implementations are immutable and safe to query from several threads.
class GenomeSolution {
 public:
  virtual ~GenomeSolution() = default;

  virtual double value(Point local) const = 0;
  virtual Eigen::VectorXd values(std::span<const Point> local) const;
  virtual double edge_length() const = 0;
};

/// Maps a boundary trace to the solution inside the genome. `solve` must be
/// callable concurrently.
class GenomeSolver {
 public:
  virtual ~GenomeSolver() = default;

  virtual std::shared_ptr<const GenomeSolution> solve(const BoundaryTrace& trace) const = 0;
  virtual int n_per_edge() const = 0;
  virtual double edge_length() const = 0;
  virtual std::string name() const = 0;
};

/// Evaluates `solution` at n_points equispaced points from a to b inclusive.
/// Throws DomainError if the segment leaves the genome closure.
Eigen::VectorXd sample_on_segment(const GenomeSolution& solution, Point a, Point b, int n_points);

}  // namespace mosaic
