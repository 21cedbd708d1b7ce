#pragma once

// The Mosaic-Flow predictor: overlapping genomes over a rectilinear domain,
// updated stage by stage until the inferred interior borders settle.

#include "mosaic/elliptic_fd.hpp"
#include "mosaic/field.hpp"
#include "mosaic/genome_solver.hpp"

#include <algorithm>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mosaic {

enum class GenomeKind { basic, aux_vertical, aux_horizontal, aux_corner };

const char* to_string(GenomeKind kind);

struct GenomePlacement {
  Point origin;
  GenomeKind kind = GenomeKind::basic;
  int stage = 0;
  /// Auxiliary layer (0 for the first); always 0 for basic genomes.
  int layer = 0;
};

/// Number of auxiliary layers per category. Layer 0 is centred on the
/// borders; layer k >= 1 adds genomes offset by +-l/2^(k+1) from them.
struct AuxLayers {
  int vertical = 1;
  int horizontal = 1;
  int corner = 1;

  static AuxLayers uniform(int n) { return {n, n, n}; }
  static AuxLayers none() { return {0, 0, 0}; }
  int max() const { return std::max({vertical, horizontal, corner}); }
};

struct GenomeArrangement {
  DomainMask domain;
  double edge_length = 1.0;
  std::vector<GenomePlacement> placements;
  int n_stages = 0;

  std::size_t count(GenomeKind kind) const;
  std::size_t n_basic() const { return count(GenomeKind::basic); }
  std::size_t n_auxiliary() const { return placements.size() - n_basic(); }
};

/// One basic genome per mask cell, then the auxiliary layers. Within a layer
/// the stage order is vertical, horizontal, corner. Throws ArrangementError
/// if a genome would leave the domain.
GenomeArrangement build_arrangement(const DomainMask& domain, const AuxLayers& layers, double l = 1.0);

/// Values on the fine-grid vertices of the cell-edge lines of the domain.
/// Vertices on the domain boundary are fixed to the boundary data.
class BorderStore {
 public:
  BorderStore() = default;
  BorderStore(const DomainGrid& grid, int cells_per_edge, const ScalarFunction& bc);

  const FieldGrid& layout() const { return values_; }
  bool on_border(int i, int j) const { return border_[values_.index(i, j)] != 0; }
  bool fixed(int i, int j) const { return fixed_[values_.index(i, j)] != 0; }
  double value(int i, int j) const { return values_(i, j); }
  double& value(int i, int j) { return values_(i, j); }
  const Eigen::VectorXd& values() const { return values_.data(); }
  Eigen::VectorXd& values() { return values_.data(); }

  /// Flat indices of border vertices that are not fixed.
  const std::vector<Eigen::Index>& free_vertices() const { return free_; }

  /// The n+1 values along one side (0 bottom, 1 right, 2 top, 3 left) of a
  /// mask cell, in increasing coordinate order.
  Eigen::VectorXd segment(Cell cell, int side) const;

 private:
  int n_ = 0;
  FieldGrid values_;
  std::vector<std::uint8_t> border_, fixed_;
  std::vector<Eigen::Index> free_;
};

struct ConvergenceReport {
  int iterations = 0;
  std::vector<double> max_change;
  std::vector<double> mean_change;
  bool converged = false;
  double tolerance = 0.0;
};

struct MosaicOptions {
  /// Max-norm tolerance on the change of inferred borders. Defaults to 1e-10
  /// for the numeric solver and 1e-4 otherwise.
  std::optional<double> tolerance;
  int max_iterations = 500;
  /// Start unknown borders from the inverse-distance extrapolation of the
  /// domain boundary data instead of zero.
  bool init_from_extrapolation = false;
  int threads = 1;
};

/// Iteration state of the predictor. Each iterate() solves every genome once,
/// stage by stage; writes within a stage are committed together at its end.
class MosaicPredictor {
 public:
  MosaicPredictor(GenomeArrangement arrangement, const ScalarFunction& domain_bc, const GenomeSolver& solver,
                  MosaicOptions options = {});
  ~MosaicPredictor();

  /// Runs one iteration and returns the max absolute change of the inferred
  /// borders.
  double iterate();
  /// Iterates to tolerance or max_iterations.
  ConvergenceReport run(const std::function<void(int, double)>& on_iteration = {});

  /// Basic-genome predictions on their native grids, averaged where they
  /// overlap.
  FieldGrid assemble() const;

  /// Trace for placement `index` from the current state (borders, domain data
  /// and the most recent solutions covering each point).
  BoundaryTrace trace_for_genome(std::size_t index) const;

  const BorderStore& store() const { return store_; }
  const GenomeArrangement& arrangement() const { return arrangement_; }
  const DomainGrid& grid() const { return grid_; }
  const ConvergenceReport& report() const { return report_; }
  double tolerance() const { return tolerance_; }
  /// Latest solution of placement `index`, or null before its first solve.
  std::shared_ptr<const GenomeSolution> solution(std::size_t index) const { return solutions_[index]; }

 private:
  struct Plan;

  GenomeArrangement arrangement_;
  const GenomeSolver& solver_;
  MosaicOptions options_;
  double tolerance_ = 0.0;
  int n_ = 0;
  DomainGrid grid_;
  BorderStore store_;
  std::vector<std::shared_ptr<const GenomeSolution>> solutions_;
  std::unique_ptr<Plan> plan_;
  ConvergenceReport report_;
};

struct MosaicResult {
  FieldGrid field;
  BorderStore store;
  ConvergenceReport report;
};

MosaicResult mf_predict(const GenomeArrangement& arrangement, const ScalarFunction& domain_bc,
                        const GenomeSolver& solver, const MosaicOptions& options = {});

enum class SchwarzMode { simple_exchange, auxiliary };

struct SchwarzOptions {
  /// Stop once the MAE against the direct solve reaches this value.
  double mae_target = 1e-12;
  double tolerance = 0.0;
  int max_iterations = 2000;
  /// Initial guess for the shared border; a constant boundary function is
  /// then reproduced by the first sweep in both modes.
  bool init_from_extrapolation = true;
};

struct SchwarzResult {
  ConvergenceReport report;
  /// MAE against the direct solve after each iteration.
  std::vector<double> mae;
  /// First iteration whose MAE is at most mae_target, or -1.
  int iterations_to_target = -1;
};

/// Two unit genomes on [0,2] x [0,1] with the numeric genome solver, either
/// exchanging the shared border directly or through a middle auxiliary genome.
SchwarzResult schwarz_two_genome_demo(SchwarzMode mode, const ScalarFunction& bc, const SchwarzOptions& options = {});

}  // namespace mosaic
