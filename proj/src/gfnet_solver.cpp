#include "mosaic/gfnet_solver.hpp"

#include "mosaic/errors.hpp"

#include <cmath>
#include <string>

namespace mosaic {

namespace {

template <class S>
class GfnetSolution final : public GenomeSolution {
 public:
  GfnetSolution(std::shared_ptr<const MlpModel<S>> model, BoundaryTrace trace, int n,
                std::shared_ptr<const Eigen::MatrixXd> basis)
      : model_(std::move(model)), trace_(std::move(trace)), n_(n), basis_(std::move(basis)) {
    if (basis_) vertex_values_ = basis_->transpose() * trace_.values();
  }

  double value(Point local) const override {
    return values(std::span<const Point>(&local, 1))[0];
  }

  Eigen::VectorXd values(std::span<const Point> local) const override {
    Eigen::VectorXd out(static_cast<Eigen::Index>(local.size()));
    std::vector<Point> rest;
    std::vector<Eigen::Index> rest_slot;
    const double h = model_->edge_length() / n_;
    for (std::size_t k = 0; k < local.size(); ++k) {
      const auto slot = static_cast<Eigen::Index>(k);
      if (vertex_values_.size() > 0) {
        const double fi = local[k].x / h, fj = local[k].y / h;
        const long i = std::lround(fi), j = std::lround(fj);
        if (std::abs(fi - i) < 1e-9 && std::abs(fj - j) < 1e-9 && i >= 0 && j >= 0 && i <= n_ && j <= n_) {
          out[slot] = vertex_values_[j * (n_ + 1) + i];
          continue;
        }
      }
      rest.push_back(local[k]);
      rest_slot.push_back(slot);
    }
    if (!rest.empty()) {
      const Eigen::VectorXd v = forward_batch(*model_, trace_, rest);
      for (std::size_t k = 0; k < rest.size(); ++k) out[rest_slot[k]] = v[static_cast<Eigen::Index>(k)];
    }
    return out;
  }

  double edge_length() const override { return model_->edge_length(); }

 private:
  std::shared_ptr<const MlpModel<S>> model_;
  BoundaryTrace trace_;
  int n_;
  std::shared_ptr<const Eigen::MatrixXd> basis_;
  Eigen::VectorXd vertex_values_;
};

}  // namespace

template <class S>
GfnetGenomeSolver<S>::GfnetGenomeSolver(MlpModel<S> model, int n_per_edge)
    : model_(std::make_shared<const MlpModel<S>>(std::move(model))), n_(n_per_edge) {
  if (n_ < 1 || 4 * n_ != model_->n_bc()) {
    throw ContractError("GfnetGenomeSolver: model takes " + std::to_string(model_->n_bc()) +
                        " boundary values, not 4 x " + std::to_string(n_));
  }
  if (model_->arch() == Architecture::lpfc) {
    const double h = model_->edge_length() / n_;
    std::vector<Point> pts;
    pts.reserve(static_cast<std::size_t>((n_ + 1) * (n_ + 1)));
    for (int j = 0; j <= n_; ++j)
      for (int i = 0; i <= n_; ++i) pts.push_back({i * h, j * h});
    basis_ = std::make_shared<const Eigen::MatrixXd>(lpfc_basis(*model_, pts));
  }
}

template <class S>
std::shared_ptr<const GenomeSolution> GfnetGenomeSolver<S>::solve(const BoundaryTrace& trace) const {
  if (trace.size() != model_->n_bc()) {
    throw ContractError("GfnetGenomeSolver: trace has " + std::to_string(trace.size()) + " values, model expects " +
                        std::to_string(model_->n_bc()));
  }
  return std::make_shared<GfnetSolution<S>>(model_, trace, n_, basis_);
}

template <class S>
std::string GfnetGenomeSolver<S>::name() const {
  std::string s = std::string("gfnet-") + to_string(model_->arch());
  if (model_->spec().exact_bc) s += "-bc";
  return s;
}

template class GfnetGenomeSolver<float>;
template class GfnetGenomeSolver<double>;

}  // namespace mosaic
