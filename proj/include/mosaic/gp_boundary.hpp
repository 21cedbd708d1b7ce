#pragma once

// Gaussian-process boundary functions wrapped around the genome perimeter,
// and the training datasets built from them.

#include "mosaic/field.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

namespace mosaic {

enum class KernelFamily { squared_exponential, power_exponential };

struct KernelSpec {
  KernelFamily family = KernelFamily::squared_exponential;
  double variance = 1.0;
  double lengthscale = 1.0;
  double power = 2.0;
  double jitter = 1e-10;

  /// Throws ContractError on invalid parameters.
  void validate() const;
};

/// min(|s - t|, P - |s - t|) for perimeter P.
double periodic_arc_distance(double s, double t, double perimeter);

/// Covariance of the boundary process at arclengths s and t on a perimeter of
/// length `perimeter`. The distance fed to the kernel is the chord of the
/// circle with that circumference, (P/pi) sin(pi d / P), which matches the
/// arc distance d for small d and keeps the kernel positive definite.
double kernel_eval(const KernelSpec& spec, double s, double t, double perimeter);

/// Covariance over the trace arclengths, without jitter.
Eigen::MatrixXd covariance_matrix(const KernelSpec& spec, int n_per_edge, double l = 1.0);

/// Draws L z with L the Cholesky factor of K + jitter * variance * I and
/// z ~ N(0, I)
/// from a generator seeded by `seed`. Jitter is raised tenfold up to three
/// times before NumericalError is thrown.
BoundaryTrace sample_trace(const KernelSpec& spec, int n_per_edge, std::uint64_t seed, double l = 1.0);

struct HyperparameterRanges {
  KernelFamily family = KernelFamily::squared_exponential;
  double lengthscale_min = 0.3;
  double lengthscale_max = 3.0;
  double variance_min = 0.25;
  double variance_max = 4.0;
  double power_min = 1.0;
  double power_max = 2.0;
  double jitter = 1e-10;

  void validate() const;
};

/// The first `count` Sobol points scaled into `ranges`. Skips the origin.
std::vector<KernelSpec> sobol_kernel_specs(const HyperparameterRanges& ranges, int count);

/// Per-sample seed derived from the dataset seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t id);

struct DataPoint {
  double x = 0.0;
  double y = 0.0;
  double u = 0.0;
};

struct TrainingSample {
  BoundaryTrace trace;
  std::vector<DataPoint> data_points;
  std::int64_t sample_id = 0;
};

struct DatasetConfig {
  int n_samples = 2000;
  HyperparameterRanges ranges;
  int n_data_points = 100;
  int n_per_edge = kDefaultPointsPerEdge;
  double edge_length = 1.0;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct Dataset {
  DatasetConfig config;
  std::vector<TrainingSample> samples;
};

/// Samples traces with Sobol hyperparameters, solves each on the genome
/// grid and keeps n_data_points interior vertices chosen without
/// replacement. Deterministic for a given config regardless of threads.
Dataset generate_dataset(const DatasetConfig& config);

inline constexpr int kDatasetFormatVersion = 1;

/// Writes manifest.json and samples.bin into `dir` (created if missing).
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace mosaic
