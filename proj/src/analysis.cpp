#include "mosaic/analysis.hpp"

#include "mosaic/errors.hpp"

#include <cmath>
#include <fstream>

namespace mosaic {

double genomic_test_mae(const GenomeSolver& solver, const DomainMask& domain, const FieldGrid& truth, double l) {
  const int n = solver.n_per_edge();
  const double h = l / n;
  const Point origin{domain.min_x() * l, domain.min_y() * l};
  if (std::abs(truth.dx() - h) > 1e-12 * l || std::abs(truth.dy() - h) > 1e-12 * l ||
      truth.nx() != domain.width() * n + 1 || truth.ny() != domain.height() * n + 1 ||
      std::abs(truth.origin().x - origin.x) > 1e-12 * l || std::abs(truth.origin().y - origin.y) > 1e-12 * l) {
    throw ContractError("genomic_test_mae: ground truth is not on the " + std::to_string(n) +
                        "-cells-per-genome vertex grid of the domain");
  }
  std::vector<Point> local;
  for (int j = 0; j <= n; ++j)
    for (int i = 0; i <= n; ++i) local.push_back({i * h, j * h});

  double sum = 0.0;
  std::int64_t count = 0;
  for (const Cell c : domain.cells()) {
    const int i0 = (c.x - domain.min_x()) * n, j0 = (c.y - domain.min_y()) * n;
    auto at = [&](Point p) {
      return truth(i0 + static_cast<int>(std::lround(p.x / h)), j0 + static_cast<int>(std::lround(p.y / h)));
    };
    Eigen::VectorXd g(4 * n);
    const BoundaryTrace ring(Eigen::VectorXd::Zero(4 * n), l);
    for (int k = 0; k < 4 * n; ++k) g[k] = at(ring.point(k));
    const auto sol = solver.solve(BoundaryTrace(g, l));
    const Eigen::VectorXd pred = sol->values(local);
    for (std::size_t k = 0; k < local.size(); ++k) sum += std::abs(pred[static_cast<Eigen::Index>(k)] - at(local[k]));
    count += static_cast<std::int64_t>(local.size());
  }
  return sum / static_cast<double>(count);
}

ErrorBreakdown decompose_errors(const GenomeSolver& solver, double training_mae, const GenomeArrangement& arrangement,
                                const ScalarFunction& bc, const MosaicOptions& options) {
  const double l = arrangement.edge_length;
  const FieldGrid truth = solve_dirichlet(arrangement.domain, bc, l, solver.n_per_edge());
  ErrorBreakdown out;
  out.test_mae = genomic_test_mae(solver, arrangement.domain, truth, l);
  const MosaicResult mf = mf_predict(arrangement, bc, solver, options);
  out.final_mae = compute_mae(mf.field, truth);
  out.final_mar = compute_mar_fd(mf.field);
  out.iterations = mf.report.iterations;
  out.converged = mf.report.converged;
  out.optimization_error = training_mae;
  out.generalization_error = out.test_mae - training_mae;
  out.assembly_error = out.final_mae - (out.optimization_error + out.generalization_error);
  return out;
}

std::string layers_label(const AuxLayers& layers) {
  return "v" + std::to_string(layers.vertical) + "h" + std::to_string(layers.horizontal) + "c" +
         std::to_string(layers.corner);
}

std::vector<AuxLayers> default_sweep_configurations() {
  std::vector<AuxLayers> out = {AuxLayers::none(), AuxLayers::uniform(1)};
  for (int k = 2; k <= 4; ++k) {
    out.push_back({k, k - 1, k - 1});
    out.push_back({k, k, k - 1});
    out.push_back({k, k, k});
  }
  return out;
}

std::vector<SweepRow> density_sweep(const GenomeSolver& solver, const DomainMask& domain, const ScalarFunction& bc,
                                    const std::vector<AuxLayers>& configurations, double l,
                                    const MosaicOptions& options, int threads) {
  const FieldGrid truth = solve_dirichlet(domain, bc, l, solver.n_per_edge());
  std::vector<SweepRow> rows(configurations.size());
  std::vector<std::string> failure(configurations.size());
  const auto n = static_cast<long>(configurations.size());
#pragma omp parallel for num_threads(std::max(1, threads)) schedule(dynamic)
  for (long k = 0; k < n; ++k) {
    const auto idx = static_cast<std::size_t>(k);
    try {
      const AuxLayers& layers = configurations[idx];
      const GenomeArrangement arr = build_arrangement(domain, layers, l);
      const MosaicResult mf = mf_predict(arr, bc, solver, options);
      rows[idx] = {layers_label(layers), layers, arr.placements.size(), mf.report.iterations, mf.report.converged,
                   compute_mae(mf.field, truth)};
    } catch (const std::exception& e) {
      failure[idx] = e.what();
    }
  }
  for (std::size_t k = 0; k < failure.size(); ++k) {
    if (!failure[k].empty()) {
      throw NumericalError("density_sweep: configuration " + layers_label(configurations[k]) + ": " + failure[k]);
    }
  }
  return rows;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  return out;
}

}  // namespace

void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows) {
  auto out = open_csv(path);
  out << "label,vertical,horizontal,corner,n_genomes,iterations,converged,final_mae\n";
  for (const auto& r : rows) {
    out << r.label << ',' << r.layers.vertical << ',' << r.layers.horizontal << ',' << r.layers.corner << ','
        << r.n_genomes << ',' << r.iterations << ',' << (r.converged ? 1 : 0) << ',' << r.final_mae << '\n';
  }
  if (!out) throw IoError("cannot write " + path.string());
}

void write_breakdown_csv(const std::filesystem::path& path, const std::vector<ErrorBreakdown>& rows) {
  auto out = open_csv(path);
  out << "optimization_error,generalization_error,assembly_error,final_mae,final_mar,test_mae,iterations,converged\n";
  for (const auto& r : rows) {
    out << r.optimization_error << ',' << r.generalization_error << ',' << r.assembly_error << ',' << r.final_mae
        << ',' << r.final_mar << ',' << r.test_mae << ',' << r.iterations << ',' << (r.converged ? 1 : 0) << '\n';
  }
  if (!out) throw IoError("cannot write " + path.string());
}

}  // namespace mosaic
