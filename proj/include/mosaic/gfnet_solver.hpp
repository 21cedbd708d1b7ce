#pragma once

// Genome solver backed by a trained GFNet.

#include "mosaic/gfnet.hpp"
#include "mosaic/genome_solver.hpp"

#include <memory>

namespace mosaic {

/// Solutions evaluate the network at the requested points. For LPFC models
/// the last hidden layer is cached at the (n+1)^2 genome vertices, so
/// vertex queries cost one dot product with the trace.
template <class Scalar>
class GfnetGenomeSolver final : public GenomeSolver {
 public:
  explicit GfnetGenomeSolver(MlpModel<Scalar> model, int n_per_edge = kDefaultPointsPerEdge);

  std::shared_ptr<const GenomeSolution> solve(const BoundaryTrace& trace) const override;
  int n_per_edge() const override { return n_; }
  double edge_length() const override { return model_->edge_length(); }
  std::string name() const override;

  const MlpModel<Scalar>& model() const { return *model_; }

 private:
  std::shared_ptr<const MlpModel<Scalar>> model_;
  int n_;
  /// n_bc x (n+1)^2, empty unless LPFC.
  std::shared_ptr<const Eigen::MatrixXd> basis_;
};

}  // namespace mosaic
