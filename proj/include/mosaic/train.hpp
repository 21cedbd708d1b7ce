#pragma once

// Minibatch Adam training of GFNet on a boundary-trace dataset.

#include "mosaic/gfnet.hpp"
#include "mosaic/gp_boundary.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <vector>

namespace mosaic {

struct TrainConfig {
  double lr0 = 5e-4;
  double decay = 0.8;
  int patience = 200;
  double threshold = 1e-4;
  double lr_min = 1e-7;
  int batch_size = 64;
  /// Fraction of samples held out for validation (9:1 split).
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  /// Hard cap on epochs; 0 runs until the schedule reaches lr_min.
  int max_epochs = 0;
  /// Cap on (trace, collocation point) residual pairs per FC batch; 0 uses
  /// every pair. LPFC always uses every pair.
  int max_residual_pairs = 0;

  void validate() const;
};

/// Multiplies the learning rate by `decay` whenever the monitored loss has
/// not improved by a relative `threshold` for `patience` consecutive epochs.
/// Finished once the rate reaches lr_min.
class PlateauSchedule {
 public:
  PlateauSchedule() = default;
  PlateauSchedule(double lr0, double decay, int patience, double threshold, double lr_min);

  /// Records one epoch's loss; returns true if the rate was reduced.
  bool observe(double loss);
  double lr() const { return lr_; }
  bool finished() const { return lr_ <= lr_min_ * (1.0 + 1e-12); }

  double best() const { return best_; }
  int stale_epochs() const { return stale_; }
  void restore(double lr, double best, int stale) {
    lr_ = lr;
    best_ = best;
    stale_ = stale;
    seen_ = true;
  }

 private:
  double lr_ = 5e-4;
  double decay_ = 0.8;
  int patience_ = 200;
  double threshold_ = 1e-4;
  double lr_min_ = 1e-7;
  double best_ = 0.0;
  int stale_ = 0;
  bool seen_ = false;
};

/// Draws 4 n candidates uniformly in the open genome, scores each by |grad u|
/// averaged over at most 8 trace columns and keeps n of them by weighted
/// sampling without replacement (weight = score + 0.1 mean score).
template <class Scalar>
std::vector<Point> resample_collocation(const MlpModel<Scalar>& model, const Eigen::MatrixXd& traces,
                                        int n_collocation, std::uint64_t seed);

/// n points uniform in the open genome.
std::vector<Point> uniform_collocation(int n, double l, std::uint64_t seed);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lr = 0.0;
};

/// Owns the optimizer state. Training is deterministic for a given dataset,
/// configuration and seed, including across save_state / resume.
template <class Scalar>
class Trainer {
 public:
  Trainer(const Dataset& dataset, const ModelSpec& spec, const LossConfig& loss, const TrainConfig& config);

  /// Runs one epoch; returns false once training has finished.
  bool step();
  /// Steps until finished; `on_epoch` sees each record as it is produced.
  void run(const std::function<void(const EpochRecord&)>& on_epoch = {});
  bool finished() const;

  const MlpModel<Scalar>& model() const { return model_; }
  const MlpModel<Scalar>& best_model() const { return best_; }
  int best_epoch() const { return best_epoch_; }
  double best_val_loss() const { return best_val_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  int epoch() const { return epoch_; }

  const std::vector<int>& train_indices() const { return train_; }
  const std::vector<int>& val_indices() const { return val_; }

  /// Data-term MAE of the best model over the training samples' boundary and
  /// data points.
  double train_mae() const;

  /// Writes the full optimizer state (current and best weights, Adam moments,
  /// schedule, RNG, history) to `dir`.
  void save_state(const std::filesystem::path& dir) const;
  /// Restores a state written by save_state for the same dataset and configs.
  void load_state(const std::filesystem::path& dir);

 private:
  Batch make_batch(std::span<const int> samples, const std::vector<Point>& collocation,
                   std::mt19937_64* pair_rng) const;

  const Dataset& dataset_;
  LossConfig loss_;
  TrainConfig config_;
  MlpModel<Scalar> model_;
  MlpModel<Scalar> best_;
  typename MlpModel<Scalar>::Vector adam_m_, adam_v_;
  std::int64_t adam_t_ = 0;
  PlateauSchedule schedule_;
  std::mt19937_64 rng_;
  std::vector<int> train_, val_;
  Batch val_batch_;
  int epoch_ = 0;
  int best_epoch_ = -1;
  double best_val_ = 0.0;
  std::vector<EpochRecord> history_;
};

/// Mean absolute error of the model over every boundary and data point of
/// the given samples.
template <class Scalar>
double dataset_mae(const MlpModel<Scalar>& model, const Dataset& dataset, std::span<const int> samples);

struct GenomeMetrics {
  /// Mean absolute error against the finite-difference solution over the
  /// genome vertex grid.
  double mae = 0.0;
  /// Mean absolute Laplacian of the network at the interior vertices.
  double mar = 0.0;
};

/// Test metrics over every sample of `dataset`, on the (n+1)^2 vertex grid
/// with n the dataset's points per edge.
template <class Scalar>
GenomeMetrics evaluate_model(const MlpModel<Scalar>& model, const Dataset& dataset);

void write_history_csv(const std::filesystem::path& path, const std::vector<EpochRecord>& history);

}  // namespace mosaic
