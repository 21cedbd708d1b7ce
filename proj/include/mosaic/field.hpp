#pragma once

// Geometric and field types shared by every stage of the pipeline.

#include <Eigen/Dense>

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace mosaic {

struct Point {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point&, const Point&) = default;
};

/// Scalar function of position, used for boundary data and analytic fields.
using ScalarFunction = std::function<double(Point)>;

inline constexpr int kDefaultPointsPerEdge = 32;

/// Maps arclength s in [0, 4l) to the genome perimeter, counterclockwise from
/// the lower-left corner: bottom, right, top (right to left), left (top to
/// bottom). Throws DomainError outside [0, 4l).
Point perimeter_to_point(double s, double l);

/// Inverse of perimeter_to_point. Throws DomainError if p is farther than
/// tol from the perimeter.
double point_to_perimeter(Point p, double l, double tol = 1e-12);

/// Discretized boundary function around a square genome.
///
/// Sample i sits at arclength i * 4l / N_bc. Corners belong to the edge that
/// starts at them, so each corner appears exactly once.
class BoundaryTrace {
 public:
  BoundaryTrace() = default;
  explicit BoundaryTrace(Eigen::VectorXd values, double edge_length = 1.0);

  const Eigen::VectorXd& values() const { return values_; }
  double operator[](int i) const { return values_[i]; }
  int size() const { return static_cast<int>(values_.size()); }
  int n_per_edge() const { return size() / 4; }
  double edge_length() const { return edge_length_; }

  double arclength(int i) const;
  /// Genome-local position of sample i.
  Point point(int i) const;

 private:
  Eigen::VectorXd values_;
  double edge_length_ = 1.0;
};

/// Samples g at the trace positions. Throws DataError naming the index of a
/// non-finite value.
BoundaryTrace trace_from_function(const ScalarFunction& g, double l = 1.0,
                                  int n_per_edge = kDefaultPointsPerEdge);

/// Uniform vertex grid over a rectangle, stored row-major with x fastest.
///
/// An optional activity mask marks which vertices belong to the domain; an
/// empty mask means every vertex is active. Inactive vertices hold 0.
class FieldGrid {
 public:
  FieldGrid() = default;
  FieldGrid(int nx, int ny, Point origin, double dx, double dy);
  FieldGrid(int nx, int ny, Point origin, double dx, double dy, Eigen::VectorXd data,
            std::vector<std::uint8_t> mask = {});

  static FieldGrid sample(int nx, int ny, Point origin, double dx, double dy,
                          const ScalarFunction& f);

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  Point origin() const { return origin_; }
  double dx() const { return dx_; }
  double dy() const { return dy_; }
  Eigen::Index size() const { return data_.size(); }

  double& operator()(int i, int j) { return data_[index(i, j)]; }
  double operator()(int i, int j) const { return data_[index(i, j)]; }
  Eigen::Index index(int i, int j) const { return static_cast<Eigen::Index>(j) * nx_ + i; }

  Point position(int i, int j) const { return {origin_.x + i * dx_, origin_.y + j * dy_}; }

  const Eigen::VectorXd& data() const { return data_; }
  Eigen::VectorXd& data() { return data_; }

  bool active(int i, int j) const { return mask_.empty() || mask_[index(i, j)] != 0; }
  const std::vector<std::uint8_t>& mask() const { return mask_; }
  Eigen::Index active_count() const;

  bool same_layout(const FieldGrid& other) const;
  bool all_finite() const;

 private:
  int nx_ = 0;
  int ny_ = 0;
  Point origin_{};
  double dx_ = 1.0;
  double dy_ = 1.0;
  Eigen::VectorXd data_;
  std::vector<std::uint8_t> mask_;
};

struct Cell {
  int x = 0;
  int y = 0;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

/// Set of unit genome cells (in genome-edge units). Non-empty and
/// edge-connected.
class DomainMask {
 public:
  explicit DomainMask(std::vector<Cell> cells);
  static DomainMask rectangle(int width, int height);

  bool contains(int gx, int gy) const;
  bool contains(Cell c) const { return contains(c.x, c.y); }
  const std::vector<Cell>& cells() const { return cells_; }
  std::size_t size() const { return cells_.size(); }

  int min_x() const { return min_x_; }
  int min_y() const { return min_y_; }
  int width() const { return width_; }
  int height() const { return height_; }

  /// True if the open square [x0, x0+side] x [y0, y0+side] (edge-length
  /// units) is covered by mask cells.
  bool covers_square(double x0, double y0, double side) const;

 private:
  std::vector<Cell> cells_;
  std::vector<std::uint8_t> occupancy_;
  int min_x_ = 0, min_y_ = 0, width_ = 0, height_ = 0;
};

struct Metrics {
  double mae = 0.0;
  double mar = 0.0;
  Eigen::Index n_points = 0;
};

/// Mean absolute pointwise difference over vertices active in both fields.
/// Throws ContractError on layout mismatch.
double compute_mae(const FieldGrid& pred, const FieldGrid& truth);

/// Mean absolute 5-point Laplacian over vertices whose four neighbours are
/// all active. Throws ContractError when the grid has no such vertex.
double compute_mar_fd(const FieldGrid& field);

void write_field_csv(const std::filesystem::path& path, const FieldGrid& field);
FieldGrid read_field_csv(const std::filesystem::path& path);

}  // namespace mosaic
