#pragma once

// GFNet: a tanh MLP mapping (boundary trace, point) to the Laplace solution,
// with forward jets for spatial derivatives and reverse-mode weight
// gradients of the physics-informed loss.

#include "mosaic/field.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace mosaic {

enum class Architecture { fc, lpfc };

const char* to_string(Architecture arch);
Architecture parse_architecture(const std::string& name);

struct ModelSpec {
  Architecture arch = Architecture::lpfc;
  /// Wrap the network as G(g, x) + phi(x) N(g, x). FC only.
  bool exact_bc = false;
  /// Hidden widths. For LPFC the last one is the trace length.
  std::vector<int> hidden;
  int n_bc = 4 * kDefaultPointsPerEdge;
  double edge_length = 1.0;

  /// Throws ContractError when the widths do not fit the architecture.
  void validate() const;
  /// Input, hidden and output widths as stored in checkpoints.
  std::vector<int> layer_sizes() const;
};

/// Named architectures: fc, lpfc, lpfc-deep and the reduced fc-desk,
/// lpfc-desk. Throws ConfigError for unknown names.
ModelSpec model_preset(const std::string& name);

/// Dense layers over one flat parameter vector. Layer k occupies a
/// row-major (out x in) weight block followed by its bias.
template <class Scalar>
class MlpModel {
 public:
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using WeightMap = Eigen::Map<RowMatrix>;
  using ConstWeightMap = Eigen::Map<const RowMatrix>;
  using BiasMap = Eigen::Map<Vector>;
  using ConstBiasMap = Eigen::Map<const Vector>;

  MlpModel() = default;
  /// All parameters zero.
  explicit MlpModel(ModelSpec spec);
  /// Glorot-uniform weights, zero biases.
  static MlpModel glorot(ModelSpec spec, std::uint64_t seed);

  const ModelSpec& spec() const { return spec_; }
  Architecture arch() const { return spec_.arch; }
  int n_bc() const { return spec_.n_bc; }
  double edge_length() const { return spec_.edge_length; }
  int n_layers() const { return static_cast<int>(sizes_.size()) - 1; }
  int in_size(int k) const { return sizes_[k]; }
  int out_size(int k) const { return sizes_[k + 1]; }

  Eigen::Index n_params() const { return params_.size(); }
  Vector& params() { return params_; }
  const Vector& params() const { return params_; }
  Eigen::Index weight_offset(int k) const { return offsets_[k]; }
  Eigen::Index bias_offset(int k) const { return offsets_[k] + Eigen::Index(sizes_[k]) * sizes_[k + 1]; }

  WeightMap weight(int k) { return {params_.data() + weight_offset(k), out_size(k), in_size(k)}; }
  ConstWeightMap weight(int k) const { return {params_.data() + weight_offset(k), out_size(k), in_size(k)}; }
  BiasMap bias(int k) { return {params_.data() + bias_offset(k), out_size(k)}; }
  ConstBiasMap bias(int k) const { return {params_.data() + bias_offset(k), out_size(k)}; }

  template <class Other>
  MlpModel<Other> cast() const {
    MlpModel<Other> out(spec_);
    out.params() = params_.template cast<Other>();
    return out;
  }

 private:
  ModelSpec spec_;
  std::vector<int> sizes_;
  std::vector<Eigen::Index> offsets_;
  Vector params_;
};

/// u and its spatial derivatives at one point.
struct SpatialDerivatives {
  double u = 0.0;
  double ux = 0.0;
  double uy = 0.0;
  double uxx = 0.0;
  double uyy = 0.0;
  double uxy = 0.0;

  double laplacian() const { return uxx + uyy; }
};

/// Inverse-squared-distance average of the trace values, with distances
/// regularized by +1e-10.
double extrapolate_bc(const BoundaryTrace& g, Point x);
SpatialDerivatives extrapolate_bc_derivatives(const BoundaryTrace& g, Point x);

/// x (l - x) y (l - y).
double phi(Point x, double l);
SpatialDerivatives phi_derivatives(Point x, double l);

template <class Scalar>
double forward(const MlpModel<Scalar>& model, const BoundaryTrace& g, Point x);

template <class Scalar>
Eigen::VectorXd forward_batch(const MlpModel<Scalar>& model, const BoundaryTrace& g,
                              std::span<const Point> points);

/// Derivatives with respect to x only, g held fixed. `order` is 1 or 2; the
/// mixed derivative is filled for order 2.
template <class Scalar>
std::vector<SpatialDerivatives> spatial_derivatives_batch(const MlpModel<Scalar>& model,
                                                          const BoundaryTrace& g,
                                                          std::span<const Point> points, int order = 2);

template <class Scalar>
SpatialDerivatives spatial_derivatives(const MlpModel<Scalar>& model, const BoundaryTrace& g, Point x);

/// |grad u| for every (trace column, point) pair: rows are traces.
template <class Scalar>
Eigen::MatrixXd gradient_magnitude(const MlpModel<Scalar>& model, const Eigen::MatrixXd& traces,
                                   std::span<const Point> points);

/// LPFC last hidden layer h(x), one column per point, so that
/// u(g, x) = g . h(x).
template <class Scalar>
Eigen::MatrixXd lpfc_basis(const MlpModel<Scalar>& model, std::span<const Point> points);

struct LossConfig {
  double alpha = 1e-3;
  double beta = 0.0;
  int n_collocation = 400;
  bool adaptive_collocation = true;

  void validate() const;
};

/// Traces, fitted targets and residual pairs for one loss evaluation.
/// Targets and residual pairs index into `traces` columns and the point
/// lists.
struct Batch {
  struct Target {
    int trace = 0;
    int point = 0;
    double value = 0.0;
  };
  struct Pair {
    int trace = 0;
    int point = 0;
  };

  Eigen::MatrixXd traces;
  std::vector<Point> points;
  std::vector<Target> targets;
  std::vector<Point> collocation;
  std::vector<Pair> residual_pairs;
};

template <class Scalar>
struct LossResult {
  double total = 0.0;
  /// Mean squared error over targets.
  double data = 0.0;
  /// Mean squared Laplacian over residual pairs.
  double residual = 0.0;
  /// Sum of squared parameters.
  double tikhonov = 0.0;
  typename MlpModel<Scalar>::Vector gradient;
};

/// data + alpha residual + beta tikhonov and, when requested, its gradient
/// with respect to every parameter. Throws ContractError for an empty batch.
template <class Scalar>
LossResult<Scalar> loss_and_gradients(const MlpModel<Scalar>& model, const Batch& batch,
                                      const LossConfig& config, bool with_gradient = true);

/// Checkpoint directory: model.json plus weights.bin (little-endian, in the
/// model's precision, layer order, weights row-major then bias).
inline constexpr int kCheckpointFormatVersion = 1;

template <class Scalar>
void checkpoint_save(const MlpModel<Scalar>& model, const std::filesystem::path& dir,
                     const std::string& fingerprint = "");

/// Loads either precision and converts to Scalar. Throws FormatError on a
/// version, size or architecture mismatch and IoError when files are missing.
template <class Scalar>
MlpModel<Scalar> checkpoint_load(const std::filesystem::path& dir);

/// "f32" or "f64" as recorded in a checkpoint manifest.
std::string checkpoint_precision(const std::filesystem::path& dir);

}  // namespace mosaic
