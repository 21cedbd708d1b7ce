#pragma once

// Error decomposition and arrangement-density studies for the predictor.

#include "mosaic/mosaic.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace mosaic {

/// MAE of the solver over every basic genome's vertices when each genome
/// receives its boundary trace from the ground truth (no iteration). Throws
/// ContractError when `truth` is not on the domain's genome-vertex grid.
double genomic_test_mae(const GenomeSolver& solver, const DomainMask& domain, const FieldGrid& truth,
                        double l = 1.0);

/// The approximation component is not estimated.
struct ErrorBreakdown {
  double optimization_error = 0.0;    // training MAE
  double generalization_error = 0.0;  // genomic test MAE - training MAE
  double assembly_error = 0.0;        // final MAE - genomic test MAE
  double final_mae = 0.0;
  double final_mar = 0.0;
  double test_mae = 0.0;
  int iterations = 0;
  bool converged = false;
};

/// Runs genomic_test_mae and mf_predict against the direct solve of `bc`.
/// The assembly term is computed as the remainder so the three components
/// add up to final_mae.
ErrorBreakdown decompose_errors(const GenomeSolver& solver, double training_mae, const GenomeArrangement& arrangement,
                                const ScalarFunction& bc, const MosaicOptions& options = {});

struct SweepRow {
  std::string label;
  AuxLayers layers;
  std::size_t n_genomes = 0;
  int iterations = 0;
  bool converged = false;
  double final_mae = 0.0;
};

/// "v1h1c1" style label of per-category layer counts.
std::string layers_label(const AuxLayers& layers);

/// Base arrangement plus 0-3 extra layers, adding one category at a time:
/// none, 1-1-1, 2-1-1, 2-2-1, 2-2-2, ..., 4-4-4.
std::vector<AuxLayers> default_sweep_configurations();

/// One mf_predict per configuration (run concurrently up to `threads`).
std::vector<SweepRow> density_sweep(const GenomeSolver& solver, const DomainMask& domain, const ScalarFunction& bc,
                                    const std::vector<AuxLayers>& configurations, double l = 1.0,
                                    const MosaicOptions& options = {}, int threads = 1);

/// Header: label,vertical,horizontal,corner,n_genomes,iterations,converged,final_mae
void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows);
/// Header: optimization_error,generalization_error,assembly_error,final_mae,final_mar,test_mae,iterations,converged
void write_breakdown_csv(const std::filesystem::path& path, const std::vector<ErrorBreakdown>& rows);

}  // namespace mosaic
